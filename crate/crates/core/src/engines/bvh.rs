use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{fill_by_slices, rasterize};
use crate::error::{Error, Result};
use crate::geometry::{ClosestPoint, GridSpec, ScalarGrid, TriangleMesh, Vec3};

const LEAF_SIZE: usize = 4;
const MAX_DEPTH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BvhNode {
    pub lo: Vec3,
    pub hi: Vec3,
    /// First slot in [`Bvh::order`] for leaves.
    pub start: u32,
    /// Triangle count; zero for internal nodes.
    pub count: u32,
    pub left: u32,
    pub right: u32,
}

impl BvhNode {
    pub fn is_leaf(&self) -> bool {
        self.count > 0
    }

    #[inline(always)]
    fn distance_squared(&self, p: Vec3) -> f64 {
        let mut d = 0.0;
        for a in 0..3 {
            let e = (self.lo[a] - p[a]).max(0.0) + (p[a] - self.hi[a]).max(0.0);
            d += e * e;
        }
        d
    }
}

/// Binary box hierarchy over a mesh's triangles.
#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    order: Vec<u32>,
    triangle_count: usize,
}

/// Reusable traversal queue.
#[derive(Default)]
pub struct QueryScratch {
    heap: BinaryHeap<Pending>,
}

#[derive(Clone, Copy)]
struct Pending {
    lower_bound: f64,
    node: u32,
}

impl PartialEq for Pending {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Pending {
    // reversed: BinaryHeap pops the smallest lower bound first
    fn cmp(&self, o: &Self) -> Ordering {
        o.lower_bound
            .total_cmp(&self.lower_bound)
            .then(o.node.cmp(&self.node))
    }
}

/// Median split on the longest axis of the triangle-centroid bounds, leaves of at
/// most four triangles.
pub fn build_bvh(mesh: &TriangleMesh) -> Result<Bvh> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let tris = mesh.triangles();
    let centroids: Vec<Vec3> = tris.iter().map(|t| t.centroid()).collect();
    let mut order: Vec<u32> = (0..tris.len() as u32).collect();
    let mut nodes = Vec::with_capacity(2 * tris.len() / LEAF_SIZE + 1);
    nodes.push(empty_node());
    split(mesh, &centroids, &mut order, 0, tris.len(), 0, &mut nodes, 0);
    Ok(Bvh {
        nodes,
        order,
        triangle_count: tris.len(),
    })
}

fn empty_node() -> BvhNode {
    BvhNode {
        lo: Vec3::ZERO,
        hi: Vec3::ZERO,
        start: 0,
        count: 0,
        left: 0,
        right: 0,
    }
}

#[allow(clippy::too_many_arguments)]
fn split(
    mesh: &TriangleMesh,
    centroids: &[Vec3],
    order: &mut [u32],
    start: usize,
    end: usize,
    depth: usize,
    nodes: &mut Vec<BvhNode>,
    slot: usize,
) {
    let tris = mesh.triangles();
    let mut lo = Vec3::splat(f64::INFINITY);
    let mut hi = Vec3::splat(f64::NEG_INFINITY);
    let mut clo = lo;
    let mut chi = hi;
    for &f in &order[start..end] {
        let t = &tris[f as usize];
        lo = lo.min(t.a).min(t.b).min(t.c);
        hi = hi.max(t.a).max(t.b).max(t.c);
        clo = clo.min(centroids[f as usize]);
        chi = chi.max(centroids[f as usize]);
    }
    let count = end - start;
    if count <= LEAF_SIZE || depth >= MAX_DEPTH {
        nodes[slot] = BvhNode {
            lo,
            hi,
            start: start as u32,
            count: count as u32,
            left: 0,
            right: 0,
        };
        return;
    }
    let ext = chi - clo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = count / 2;
    order[start..end].select_nth_unstable_by(mid, |&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    let left = nodes.len();
    nodes.push(empty_node());
    nodes.push(empty_node());
    nodes[slot] = BvhNode {
        lo,
        hi,
        start: 0,
        count: 0,
        left: left as u32,
        right: left as u32 + 1,
    };
    split(mesh, centroids, order, start, start + mid, depth + 1, nodes, left);
    split(mesh, centroids, order, start + mid, end, depth + 1, nodes, left + 1);
}

impl Bvh {
    pub fn nodes(&self) -> &[BvhNode] {
        &self.nodes
    }

    /// Triangle indices, grouped by leaf.
    pub fn order(&self) -> &[u32] {
        &self.order
    }

    pub fn triangle_count(&self) -> usize {
        self.triangle_count
    }

    pub fn leaf_triangles(&self, node: &BvhNode) -> &[u32] {
        &self.order[node.start as usize..(node.start + node.count) as usize]
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[BvhNode], i: usize) -> usize {
            let n = &nodes[i];
            if n.is_leaf() {
                1
            } else {
                1 + walk(nodes, n.left as usize).max(walk(nodes, n.right as usize))
            }
        }
        walk(&self.nodes, 0)
    }

    /// Signed distance from `p` to the mesh (negative inside).
    pub fn signed_distance(&self, mesh: &TriangleMesh, p: Vec3, scratch: &mut QueryScratch) -> Result<f64> {
        self.check(mesh)?;
        let (face, c) = self
            .closest(mesh, p, None, f64::INFINITY, scratch)
            .ok_or(Error::EmptyMesh)?;
        Ok(mesh.sign_at(p, face, &c)? * c.distance())
    }

    pub(crate) fn check(&self, mesh: &TriangleMesh) -> Result<()> {
        if self.triangle_count != mesh.len() {
            return Err(Error::BvhMismatch {
                bvh: self.triangle_count,
                mesh: mesh.len(),
            });
        }
        Ok(())
    }

    /// Closest triangle to `p` among those within `sqrt(max_d2)`.
    ///
    /// Best-first traversal; a node is pruned once its box is farther than the
    /// current best. `warm` seeds the search with a likely candidate. Ties go to
    /// the lowest face index, matching [`super::sdm_naive`].
    pub fn closest(
        &self,
        mesh: &TriangleMesh,
        p: Vec3,
        warm: Option<usize>,
        max_d2: f64,
        scratch: &mut QueryScratch,
    ) -> Option<(usize, ClosestPoint)> {
        let tris = mesh.triangles();
        let mut best: Option<(usize, ClosestPoint)> = None;
        let mut best_d2 = max_d2;
        if let Some(w) = warm {
            let c = tris[w].closest_point(p);
            if c.distance_squared <= best_d2 {
                best_d2 = c.distance_squared;
                best = Some((w, c));
            }
        }
        let heap = &mut scratch.heap;
        heap.clear();
        let root_d2 = self.nodes[0].distance_squared(p);
        if root_d2 <= best_d2 {
            heap.push(Pending {
                lower_bound: root_d2,
                node: 0,
            });
        }
        while let Some(Pending { lower_bound, node }) = heap.pop() {
            if lower_bound > best_d2 {
                break;
            }
            let n = &self.nodes[node as usize];
            if n.is_leaf() {
                for &f in self.leaf_triangles(n) {
                    let f = f as usize;
                    let c = tris[f].closest_point(p);
                    let better = match best {
                        None => c.distance_squared <= best_d2,
                        Some((bf, _)) => {
                            c.distance_squared < best_d2
                                || (c.distance_squared == best_d2 && f < bf)
                        }
                    };
                    if better {
                        best_d2 = c.distance_squared;
                        best = Some((f, c));
                    }
                }
            } else {
                for child in [n.left, n.right] {
                    let d2 = self.nodes[child as usize].distance_squared(p);
                    if d2 <= best_d2 {
                        heap.push(Pending {
                            lower_bound: d2,
                            node: child,
                        });
                    }
                }
            }
        }
        best
    }

    /// Visits triangles whose box overlaps the line `{(x, y, z) : x ∈ ℝ}`.
    pub(crate) fn for_each_x_ray_candidate(&self, y: f64, z: f64, mut f: impl FnMut(u32)) {
        const PAD: f64 = 1e-9;
        let mut stack = vec![0u32];
        while let Some(i) = stack.pop() {
            let n = &self.nodes[i as usize];
            if y < n.lo.y - PAD || y > n.hi.y + PAD || z < n.lo.z - PAD || z > n.hi.z + PAD {
                continue;
            }
            if n.is_leaf() {
                self.leaf_triangles(n).iter().for_each(|&t| f(t));
            } else {
                stack.push(n.right);
                stack.push(n.left);
            }
        }
    }
}

/// Same values as [`super::sdm_naive`], computed with pruned BVH queries.
///
/// Each row walks along x and seeds every query with the previous voxel's closest
/// triangle.
pub fn sdm_bvh(mesh: &TriangleMesh, bvh: &Bvh, spec: &GridSpec) -> Result<ScalarGrid> {
    bvh.check(mesh)?;
    mesh.require_pseudonormals()?;
    let [nx, ny, _] = spec.dims;
    let values = fill_by_slices(spec, |k, out| {
        let mut scratch = QueryScratch::default();
        for j in 0..ny {
            let mut warm = None;
            for i in 0..nx {
                let p = spec.voxel_center(i, j, k);
                let (f, c) = bvh
                    .closest(mesh, p, warm, f64::INFINITY, &mut scratch)
                    .expect("unbounded query on a non-empty mesh");
                warm = Some(f);
                let sign = mesh.sign_at(p, f, &c).unwrap_or(1.0);
                out[i + nx * j] = (sign * c.distance()) as f32;
            }
        }
    });
    ScalarGrid::new(*spec, values)
}

/// `clamp(sdm_bvh, lo, hi)` without searching past the clamp band.
///
/// Voxels with no triangle within `max(hi, -lo)` are saturated; their side is taken
/// from the rasterized occupancy.
pub fn sdm_bvh_clamped(
    mesh: &TriangleMesh,
    bvh: &Bvh,
    spec: &GridSpec,
    lo: f32,
    hi: f32,
) -> Result<ScalarGrid> {
    bvh.check(mesh)?;
    mesh.require_pseudonormals()?;
    if !(lo <= 0.0 && hi >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "clamp band [{lo}, {hi}] must contain zero"
        )));
    }
    let band = (hi as f64).max(-(lo as f64));
    // a hair of slack so the cutoff never drops a triangle the clamp would keep
    let cutoff = band * band * (1.0 + 1e-9);
    let [nx, ny, _] = spec.dims;
    const UNRESOLVED: f32 = f32::INFINITY;
    let mut values = fill_by_slices(spec, |k, out| {
        let mut scratch = QueryScratch::default();
        for j in 0..ny {
            let mut warm = None;
            for i in 0..nx {
                let p = spec.voxel_center(i, j, k);
                out[i + nx * j] = match bvh.closest(mesh, p, warm, cutoff, &mut scratch) {
                    Some((f, c)) => {
                        warm = Some(f);
                        let sign = mesh.sign_at(p, f, &c).unwrap_or(1.0);
                        ((sign * c.distance()) as f32).clamp(lo, hi)
                    }
                    None => UNRESOLVED,
                };
            }
        }
    });
    if values.iter().any(|v| *v == UNRESOLVED) {
        let inside = rasterize(mesh, spec)?;
        for (v, &occupied) in values.iter_mut().zip(inside.values()) {
            if *v == UNRESOLVED {
                *v = if occupied { lo } else { hi };
            }
        }
    }
    ScalarGrid::new(*spec, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cochlea::{tessellate, ShapeParams, TessellationSpec};
    use crate::engines::{clamp_grid, sdm_naive};
    use crate::geometry::shapes::icosphere;

    fn cochlea() -> TriangleMesh {
        tessellate(&ShapeParams::default(), &TessellationSpec::default()).unwrap()
    }

    #[test]
    fn single_triangle_is_one_leaf() {
        let m = TriangleMesh::new(vec![Vec3::ZERO, Vec3::X, Vec3::Y], vec![[0, 1, 2]]).unwrap();
        let bvh = build_bvh(&m).unwrap();
        assert_eq!(bvh.nodes().len(), 1);
        assert!(bvh.nodes()[0].is_leaf());
        let spec = GridSpec::new(Vec3::new(-1.0, -1.0, -1.0), 0.4, [6, 6, 6]).unwrap();
        let mut scratch = QueryScratch::default();
        for idx in 0..spec.len() {
            let p = spec.center_of(idx);
            let (_, c) = bvh.closest(&m, p, None, f64::INFINITY, &mut scratch).unwrap();
            assert_eq!(c, m.triangle(0).closest_point(p));
        }
    }

    #[test]
    fn partition_and_containment() {
        let m = cochlea();
        let bvh = build_bvh(&m).unwrap();
        let mut seen = vec![0usize; m.len()];
        for n in bvh.nodes() {
            if n.is_leaf() {
                assert!(n.count as usize <= LEAF_SIZE);
                for &f in bvh.leaf_triangles(n) {
                    seen[f as usize] += 1;
                    let t = m.triangle(f as usize);
                    for v in [t.a, t.b, t.c] {
                        assert!((0..3).all(|a| v[a] >= n.lo[a] && v[a] <= n.hi[a]));
                    }
                }
            } else {
                for c in [n.left, n.right] {
                    let c = &bvh.nodes()[c as usize];
                    assert!((0..3).all(|a| c.lo[a] >= n.lo[a] && c.hi[a] <= n.hi[a]));
                }
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
        assert!(bvh.depth() <= MAX_DEPTH);
    }

    #[test]
    fn empty_mesh_rejected() {
        let m = TriangleMesh::new(vec![], vec![]).unwrap();
        assert!(matches!(build_bvh(&m), Err(Error::EmptyMesh)));
    }

    #[test]
    fn mismatched_bvh_rejected() {
        let a = icosphere(1.0, 1);
        let b = icosphere(1.0, 2);
        let spec = GridSpec::new(Vec3::splat(-1.0), 0.5, [3, 3, 3]).unwrap();
        assert!(matches!(
            sdm_bvh(&b, &build_bvh(&a).unwrap(), &spec),
            Err(Error::BvhMismatch { .. })
        ));
    }

    #[test]
    fn matches_naive_on_sphere() {
        let m = icosphere(1.0, 3);
        let spec = GridSpec::new(Vec3::splat(-1.4), 0.2, [15, 15, 15]).unwrap();
        let naive = sdm_naive(&m, &spec).unwrap();
        let fast = sdm_bvh(&m, &build_bvh(&m).unwrap(), &spec).unwrap();
        assert_eq!(naive, fast);
    }

    #[test]
    fn clamped_matches_clamp_of_full() {
        let m = cochlea();
        let bvh = build_bvh(&m).unwrap();
        let spec = GridSpec::new(Vec3::new(-5.0, -5.0, -2.0), 0.4, [25, 25, 30]).unwrap();
        let full = clamp_grid(&sdm_bvh(&m, &bvh, &spec).unwrap(), -0.2, 1.3);
        let banded = sdm_bvh_clamped(&m, &bvh, &spec, -0.2, 1.3).unwrap();
        assert_eq!(full, banded);
    }
}
