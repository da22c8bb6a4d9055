use super::fill_by_slices;
use crate::error::Result;
use crate::geometry::{GridSpec, ScalarGrid, TriangleMesh, Vec3};

/// Per-triangle axis-aligned boxes, structure-of-arrays.
pub(crate) struct TriangleBoxes {
    lo: [Vec<f64>; 3],
    hi: [Vec<f64>; 3],
}

impl TriangleBoxes {
    pub(crate) fn new(mesh: &TriangleMesh) -> Self {
        let n = mesh.len();
        let mut lo = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut hi = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for (i, t) in mesh.triangles().iter().enumerate() {
            let l = t.a.min(t.b).min(t.c);
            let h = t.a.max(t.b).max(t.c);
            for a in 0..3 {
                lo[a][i] = l[a];
                hi[a][i] = h[a];
            }
        }
        TriangleBoxes { lo, hi }
    }

    /// Squared distance from `p` to box `i`; a lower bound on the triangle distance.
    #[inline(always)]
    fn lower_bound(&self, i: usize, p: Vec3) -> f64 {
        let mut d = 0.0;
        for a in 0..3 {
            let e = (self.lo[a][i] - p[a]).max(0.0) + (p[a] - self.hi[a][i]).max(0.0);
            d += e * e;
        }
        d
    }
}

/// Signed distance at every voxel centre by exhaustive search over the triangles.
///
/// Every triangle is visited at every voxel (`O(N·n_T)`); a box test skips the exact
/// point-triangle computation when it cannot improve the current minimum. Ties in
/// distance go to the lowest face index. The sign comes from the pseudonormal at
/// the closest point.
pub fn sdm_naive(mesh: &TriangleMesh, spec: &GridSpec) -> Result<ScalarGrid> {
    mesh.require_pseudonormals()?;
    if mesh.is_empty() {
        return Err(crate::Error::EmptyMesh);
    }
    let boxes = TriangleBoxes::new(mesh);
    let tris = mesh.triangles();
    let [nx, ny, _] = spec.dims;
    let values = fill_by_slices(spec, |k, out| {
        for j in 0..ny {
            for i in 0..nx {
                let p = spec.voxel_center(i, j, k);
                let mut best_d2 = f64::INFINITY;
                let mut best = (0, tris[0].closest_point(p));
                for (f, t) in tris.iter().enumerate() {
                    if boxes.lower_bound(f, p) >= best_d2 {
                        continue;
                    }
                    let c = t.closest_point(p);
                    if c.distance_squared < best_d2 {
                        best_d2 = c.distance_squared;
                        best = (f, c);
                    }
                }
                let sign = mesh.sign_at(p, best.0, &best.1).unwrap_or(1.0);
                out[i + nx * j] = (sign * best.1.distance()) as f32;
            }
        }
    });
    ScalarGrid::new(*spec, values)
}
