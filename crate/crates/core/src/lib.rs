//! Signed distance maps (SDMs) of a four-parameter cochlea model.
//!
//! The crate provides exact mesh-based SDM engines (brute force, BVH and a
//! rasterize + distance-transform path), a trainable parameter-to-grid decoder
//! and a point-wise baseline, isosurface tools to compare the resulting level
//! sets, and a derivative-free shape fit that runs on any backend.

pub mod cochlea;
pub mod error;
pub mod engines;
pub mod fit;
pub mod geometry;
pub mod io;
pub mod isosurface;
pub mod surrogate;

pub use cochlea::{default_grid_spec, ShapeParams, TessellationSpec};
pub use error::{Error, Result};
pub use geometry::{BinaryGrid, GridSpec, ScalarGrid, TriangleMesh, Vec3};
