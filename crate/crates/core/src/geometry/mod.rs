//! Tetrahedral grid, marching tetrahedra and mesh regularizers.

mod marching;
mod mesh;
mod tet_grid;

pub use marching::{marching_tets, marching_tets_backward, EdgeCrossing};
pub use mesh::{
    adjacent_face_pairs, edge_faces, face_smoothness, topology, vertex_normals,
    vertex_normals_backward, SurfaceMesh, TopologyReport,
};
pub use tet_grid::{density_to_sdf, TetGrid, TetGridConfig, TetParams};
