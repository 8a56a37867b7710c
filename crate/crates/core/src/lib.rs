//! Nodal discontinuous Galerkin spectral element solver for the
//! Cahn-Hilliard equation on curvilinear hexahedral meshes.

pub mod basis;
pub mod chmodel;
pub mod error;
pub mod dgops;
pub mod geometry;
pub mod linsolve;
pub mod tensor;
pub mod timeloop;
pub mod verify;

pub use error::{Error, Result};
