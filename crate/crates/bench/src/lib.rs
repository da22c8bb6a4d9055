//! Shared fixtures for the criterion benches.

use sdmforge_core::cochlea::{tessellate, ShapeParams, TessellationSpec};
use sdmforge_core::{GridSpec, TriangleMesh, Vec3};

/// The default cochlea surface.
pub fn default_mesh() -> TriangleMesh {
    tessellate(&ShapeParams::default(), &TessellationSpec::default()).expect("default shape tessellates")
}

/// The default grid box at `factor` times the spacing.
pub fn coarse_spec(factor: usize) -> GridSpec {
    let dims = [50 / factor, 50 / factor, 60 / factor];
    GridSpec::new(Vec3::new(-5.0, -5.0, -2.0), 0.2 * factor as f64, dims).expect("valid grid")
}
