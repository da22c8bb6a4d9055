use super::build_bvh;
use crate::error::Result;
use crate::geometry::{point_in_mesh, BinaryGrid, GridSpec, TriangleMesh};

const EDGE_EPS: f64 = 1e-9;

enum RowCrossings {
    Clean(Vec<f64>),
    Ambiguous,
}

/// x coordinates where the line through `(·, y, z)` crosses the surface.
fn row_crossings(mesh: &TriangleMesh, bvh: &super::Bvh, y: f64, z: f64) -> RowCrossings {
    let tris = mesh.triangles();
    let mut xs = Vec::new();
    let mut ambiguous = false;
    bvh.for_each_x_ray_candidate(y, z, |f| {
        if ambiguous {
            return;
        }
        let t = &tris[f as usize];
        // barycentrics of (y, z) in the triangle's yz projection
        let e = |p: (f64, f64), q: (f64, f64)| (q.0 - p.0) * (z - p.1) - (q.1 - p.1) * (y - p.0);
        let (a, b, c) = ((t.a.y, t.a.z), (t.b.y, t.b.z), (t.c.y, t.c.z));
        let det = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
        if det == 0.0 {
            return;
        }
        let w0 = e(b, c) / det;
        let w1 = e(c, a) / det;
        let w2 = e(a, b) / det;
        let min = w0.min(w1).min(w2);
        if min < -EDGE_EPS {
            return;
        }
        if min <= EDGE_EPS {
            ambiguous = true;
            return;
        }
        xs.push(w0 * t.a.x + w1 * t.b.x + w2 * t.c.x);
    });
    if ambiguous {
        RowCrossings::Ambiguous
    } else {
        xs.sort_by(f64::total_cmp);
        RowCrossings::Clean(xs)
    }
}

/// Occupancy of every voxel centre by ray parity.
///
/// Each grid row is one ray along +x. Rows whose ray grazes an edge or vertex fall
/// back to per-voxel [`point_in_mesh`] with random directions. Centres on the
/// surface count as outside.
pub fn rasterize(mesh: &TriangleMesh, spec: &GridSpec) -> Result<BinaryGrid> {
    let bvh = build_bvh(mesh)?;
    let [nx, ny, nz] = spec.dims;
    let mut values = vec![false; spec.len()];
    for k in 0..nz {
        for j in 0..ny {
            let row = &mut values[spec.index(0, j, k)..spec.index(0, j, k) + nx];
            let centre = spec.voxel_center(0, j, k);
            match row_crossings(mesh, &bvh, centre.y, centre.z) {
                RowCrossings::Clean(xs) => {
                    let mut passed = 0;
                    for (i, cell) in row.iter_mut().enumerate() {
                        let x = spec.voxel_center(i, j, k).x;
                        while passed < xs.len() && xs[passed] < x - EDGE_EPS {
                            passed += 1;
                        }
                        let on_surface = passed < xs.len() && (xs[passed] - x).abs() <= EDGE_EPS;
                        *cell = !on_surface && passed % 2 == 1;
                    }
                }
                RowCrossings::Ambiguous => {
                    for (i, cell) in row.iter_mut().enumerate() {
                        *cell = point_in_mesh(spec.voxel_center(i, j, k), mesh).unwrap_or(false);
                    }
                }
            }
        }
    }
    BinaryGrid::new(*spec, values)
}
