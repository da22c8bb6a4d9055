//! Mesh-to-SDM backends sharing one output contract: a [`ScalarGrid`] of signed
//! distances in mm, negative inside, unclamped.
//!
//! * [`sdm_naive`] tests every triangle at every voxel and is the reference.
//! * [`sdm_bvh`] prunes with a bounding volume hierarchy and reproduces the naive
//!   values bit for bit.
//! * [`sdm_edt`] rasterizes the mesh and runs an exact separable distance transform;
//!   its values are accurate to about one voxel.

mod bvh;
mod edt;
mod naive;
mod raster;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bvh::{build_bvh, sdm_bvh, sdm_bvh_clamped, Bvh, BvhNode, QueryScratch};
pub use edt::{edt_squared, sdm_edt, sdm_from_binary, EdtGrid, EdtSdm};
pub use naive::sdm_naive;
pub use raster::rasterize;

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, ScalarGrid, TriangleMesh};

/// Lower clamp bound for reference SDMs, mm.
pub const CLAMP_LO: f32 = -0.2;
/// Upper clamp bound for reference SDMs, mm.
pub const CLAMP_HI: f32 = 1.3;

/// Names accepted wherever a backend is selected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendId {
    Naive,
    Bvh,
    Edt,
    Surrogate,
    Pointwise,
}

impl BackendId {
    pub const ALL: [BackendId; 5] = [
        BackendId::Naive,
        BackendId::Bvh,
        BackendId::Edt,
        BackendId::Surrogate,
        BackendId::Pointwise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendId::Naive => "naive",
            BackendId::Bvh => "bvh",
            BackendId::Edt => "edt",
            BackendId::Surrogate => "surrogate",
            BackendId::Pointwise => "pointwise",
        }
    }

    /// True for the backends that need a tessellated mesh.
    pub fn is_mesh_based(self) -> bool {
        matches!(self, BackendId::Naive | BackendId::Bvh | BackendId::Edt)
    }
}

impl fmt::Display for BackendId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BackendId::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::UnknownBackend(s.to_string()))
    }
}

/// Runs one of the mesh engines. BVH construction is included.
pub fn mesh_sdm(backend: BackendId, mesh: &TriangleMesh, spec: &GridSpec) -> Result<ScalarGrid> {
    match backend {
        BackendId::Naive => sdm_naive(mesh, spec),
        BackendId::Bvh => sdm_bvh(mesh, &build_bvh(mesh)?, spec),
        BackendId::Edt => Ok(sdm_edt(mesh, spec)?.grid),
        other => Err(Error::BackendUnavailable(
            other.to_string(),
            "not a mesh engine".into(),
        )),
    }
}

/// `clamp(mesh_sdm(backend, ..), lo, hi)`. The BVH engine stops searching at
/// the clamp band, which gives the same values faster.
pub fn clamped_mesh_sdm(
    backend: BackendId,
    mesh: &TriangleMesh,
    spec: &GridSpec,
    lo: f32,
    hi: f32,
) -> Result<ScalarGrid> {
    match backend {
        BackendId::Bvh => sdm_bvh_clamped(mesh, &build_bvh(mesh)?, spec, lo, hi),
        other => Ok(clamp_grid(&mesh_sdm(other, mesh, spec)?, lo, hi)),
    }
}

/// Elementwise clamp to `[lo, hi]`.
pub fn clamp_grid(s: &ScalarGrid, lo: f32, hi: f32) -> ScalarGrid {
    s.map(|v| v.clamp(lo, hi))
}

/// Worker cap from `SDMFORGE_WORKERS`, else the number of available cores.
pub fn worker_count() -> usize {
    std::env::var("SDMFORGE_WORKERS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub(crate) fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(worker_count())
            .build()
            .expect("thread pool")
    })
}

/// Fills a grid slab by slab (one z slice per task). Each task only writes its
/// own slice, so the result does not depend on the worker count.
pub(crate) fn fill_by_slices<F>(spec: &GridSpec, f: F) -> Vec<f32>
where
    F: Fn(usize, &mut [f32]) + Sync,
{
    let slice = spec.dims[0] * spec.dims[1];
    let mut values = vec![0.0f32; spec.len()];
    pool().install(|| {
        values
            .par_chunks_mut(slice)
            .enumerate()
            .for_each(|(k, out)| f(k, out));
    });
    values
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    #[test]
    fn backend_names_round_trip() {
        for b in BackendId::ALL {
            assert_eq!(b.as_str().parse::<BackendId>().unwrap(), b);
        }
        assert!(matches!(
            "vtk".parse::<BackendId>(),
            Err(Error::UnknownBackend(_))
        ));
    }

    #[test]
    fn clamp_examples() {
        let spec = GridSpec::new(Vec3::ZERO, 1.0, [3, 2, 2]).unwrap();
        let g = ScalarGrid::new(spec, vec![-0.5, 2.0, 0.4, 0.0, -0.2, 1.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
            .unwrap();
        let c = clamp_grid(&g, CLAMP_LO, CLAMP_HI);
        assert_eq!(&c.values()[..6], &[-0.2, 1.3, 0.4, 0.0, -0.2, 1.3]);
    }
}
