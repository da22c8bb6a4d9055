//! Points, triangles, meshes and sampling grids, with the exact distance and
//! inside/outside queries the SDM engines are built on.

mod grid;
mod mesh;
pub mod meshio;
pub mod shapes;
mod triangle;
mod vec3;

pub use grid::{Axis, BinaryGrid, GridSpec, ScalarGrid};
pub use mesh::{
    compute_pseudonormals, mesh_bounds, point_in_mesh, Pseudonormals, TriangleMesh,
    ON_SURFACE_TOLERANCE,
};
pub use triangle::{point_triangle_closest, ClosestPoint, Region, Triangle, MIN_TRIANGLE_AREA};
pub use vec3::Vec3;
