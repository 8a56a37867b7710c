//! Hexahedral meshes, element mappings and metric terms.

mod chmesh;
mod distort;
mod mapping;
mod mesh;
mod metrics;

pub use chmesh::{format_mesh, parse_mesh, read_mesh, write_mesh};
pub use distort::{distort_mesh, Distortion};
pub use mapping::{element_faces, element_nodes, transfinite_map, FaceSurface};
pub use mesh::{
    corner_index, face_axis, face_corners, face_sign, face_tangents, face_to_volume, generate_box_mesh, orient,
    BoundaryFace, CurvedFace, CurvedHexMesh, InteriorFace, Neighbor, Point, CORNERS,
};
pub use metrics::{build_metrics, metric_identity_residual, MetricSet};

