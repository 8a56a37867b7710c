//! Nodal DG gradient and divergence operators with BR1 fluxes, interface
//! penalty and imposed Neumann data.

mod assemble;
mod ops;
mod space;

pub use assemble::{
    add_scaled, boundary_lift, divergence_matrix, from_entries, gradient_matrix, matvec, penalty_matrix, product, triplets,
    Layout, OperatorMatrices, SparseMat, DROP_TOLERANCE,
};
pub(crate) use ops::interface_penalty;
pub use ops::{dg_divergence, dg_gradient, penalty_sigma, surface_jump_norms};
pub use space::{BoundaryRule, DgSpace, FaceLink, FacePolicy, Field, InterfaceRule, VecField};
