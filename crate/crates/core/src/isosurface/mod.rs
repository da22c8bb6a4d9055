//! Level-set extraction from sampled grids and sample-based surface metrics.

mod tables;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engines::{build_bvh, QueryScratch};
use crate::error::{Error, Result};
use crate::geometry::{
    meshio, Axis, GridSpec, ScalarGrid, TriangleMesh, Vec3, MIN_TRIANGLE_AREA,
};
use tables::{CORNERS, EDGES, TRI_TABLE};

/// Seed used by [`surface_distance`].
pub const DEFAULT_SURFACE_SEED: u64 = 0x5eed;

/// Triangle soup produced by [`marching_cubes`].
///
/// Vertices are shared between adjacent cells. Faces are wound so their
/// normals point toward larger grid values. Zero-area faces can appear where
/// the level set passes exactly through a voxel centre.
#[derive(Debug, Clone)]
pub struct IsoMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub spec: GridSpec,
    pub iso: f64,
    /// Set when the level does not cross the grid.
    pub warning: Option<String>,
}

impl IsoMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Converts to a [`TriangleMesh`], dropping faces below the minimum area.
    pub fn to_mesh(&self) -> Result<TriangleMesh> {
        let faces = self
            .faces
            .iter()
            .copied()
            .filter(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i as usize]);
                0.5 * (b - a).cross(c - a).norm() >= MIN_TRIANGLE_AREA
            })
            .collect();
        TriangleMesh::new(self.vertices.clone(), faces)
    }

    pub fn write_obj<W: Write>(&self, w: W) -> Result<()> {
        meshio::write_obj(w, &self.vertices, &self.faces)
    }

    pub fn write_stl<W: Write>(&self, w: W) -> Result<()> {
        meshio::write_stl(w, &self.vertices, &self.faces)
    }
}

fn crossing_range(s: &ScalarGrid, iso: f64) -> Option<String> {
    let (lo, hi) = s.min_max();
    let (lo, hi) = (lo as f64, hi as f64);
    if !iso.is_finite() || !(lo < iso && iso < hi) {
        Some(format!("iso {iso} does not cross the grid range [{lo}, {hi}]"))
    } else {
        None
    }
}

/// Position where the level `iso` crosses the grid edge from `a` to `b`.
///
/// `a` is always the lower-index endpoint so neighbouring cells agree bitwise.
fn edge_point(spec: &GridSpec, a: [usize; 3], b: [usize; 3], va: f64, vb: f64, iso: f64) -> Vec3 {
    let pa = spec.voxel_center(a[0], a[1], a[2]);
    let pb = spec.voxel_center(b[0], b[1], b[2]);
    let t = ((iso - va) / (vb - va)).clamp(0.0, 1.0);
    pa + (pb - pa) * t
}

/// Extracts the `iso` level set of `s` with the 256-case marching-cubes table.
///
/// Cells are visited in x-fastest order and vertices are numbered on first
/// use, so the output is deterministic. A corner counts as inside when its
/// value is below `iso`; a level that does not cross the grid yields an empty
/// mesh with [`IsoMesh::warning`] set.
pub fn marching_cubes(s: &ScalarGrid, iso: f64) -> IsoMesh {
    let spec = *s.spec();
    let mut out = IsoMesh {
        vertices: Vec::new(),
        faces: Vec::new(),
        spec,
        iso,
        warning: crossing_range(s, iso),
    };
    if out.warning.is_some() {
        return out;
    }
    let [nx, ny, nz] = spec.dims;
    if nx < 2 || ny < 2 || nz < 2 {
        return out;
    }
    let mut edge_vertex = vec![u32::MAX; spec.len() * 3];
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut v = [0.0f64; 8];
                let mut case = 0usize;
                for (c, d) in CORNERS.iter().enumerate() {
                    v[c] = s.get(i + d[0], j + d[1], k + d[2]) as f64;
                    if v[c] < iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let mut slot = |e: usize| -> u32 {
                    let [c0, c1] = EDGES[e];
                    let (d0, d1) = (CORNERS[c0], CORNERS[c1]);
                    let axis = (0..3).find(|&a| d0[a] != d1[a]).unwrap_or(0);
                    let (lo, hi, vlo, vhi) = if d0[axis] < d1[axis] {
                        (d0, d1, v[c0], v[c1])
                    } else {
                        (d1, d0, v[c1], v[c0])
                    };
                    let a = [i + lo[0], j + lo[1], k + lo[2]];
                    let key = spec.index(a[0], a[1], a[2]) * 3 + axis;
                    if edge_vertex[key] == u32::MAX {
                        let b = [i + hi[0], j + hi[1], k + hi[2]];
                        edge_vertex[key] = out.vertices.len() as u32;
                        out.vertices.push(edge_point(&spec, a, b, vlo, vhi, iso));
                    }
                    edge_vertex[key]
                };
                for tri in TRI_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let a = slot(tri[0] as usize);
                    let b = slot(tri[1] as usize);
                    let c = slot(tri[2] as usize);
                    out.faces.push([a, c, b]);
                }
            }
        }
    }
    out
}

/// One connected piece of a slice contour, in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<Vec3>,
    pub closed: bool,
}

/// All contour pieces at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourSet {
    pub level: f64,
    pub polylines: Vec<Polyline>,
}

impl ContourSet {
    pub fn is_empty(&self) -> bool {
        self.polylines.is_empty()
    }
}

// Square corners: 0 (0,0), 1 (1,0), 2 (1,1), 3 (0,1).
// Edges: 0 = 0-1, 1 = 1-2, 2 = 2-3, 3 = 3-0.
const SQUARE_CORNERS: [[usize; 2]; 4] = [[0, 0], [1, 0], [1, 1], [0, 1]];

fn square_segments(case: usize, centre_below: bool) -> &'static [[usize; 2]] {
    match case {
        1 | 14 => &[[3, 0]],
        2 | 13 => &[[0, 1]],
        3 | 12 => &[[3, 1]],
        4 | 11 => &[[1, 2]],
        6 | 9 => &[[0, 2]],
        7 | 8 => &[[3, 2]],
        // Saddles: the centre value decides which diagonal is connected.
        5 if centre_below => &[[0, 1], [2, 3]],
        5 => &[[3, 0], [1, 2]],
        10 if centre_below => &[[3, 0], [1, 2]],
        10 => &[[0, 1], [2, 3]],
        _ => &[],
    }
}

/// Marching-squares contours of the slice `index` normal to `axis`.
///
/// Returns one [`ContourSet`] per level, in the order given. Saddle cells are
/// resolved by the mean of their four corners.
pub fn slice_isocontours(
    s: &ScalarGrid,
    axis: Axis,
    index: usize,
    levels: &[f64],
) -> Result<Vec<ContourSet>> {
    let spec = s.spec();
    let a = axis.index();
    if index >= spec.dims[a] {
        return Err(Error::InvalidGrid(format!(
            "slice {index} is outside axis {axis} of length {}",
            spec.dims[a]
        )));
    }
    let (u, v) = axis.plane();
    let (nu, nv) = (spec.dims[u], spec.dims[v]);
    let at = |iu: usize, iv: usize| {
        let mut c = [0usize; 3];
        c[a] = index;
        c[u] = iu;
        c[v] = iv;
        c
    };
    let value = |iu: usize, iv: usize| {
        let c = at(iu, iv);
        s.get(c[0], c[1], c[2]) as f64
    };
    let mut sets = Vec::with_capacity(levels.len());
    for &level in levels {
        let mut points: Vec<Vec3> = Vec::new();
        let mut segments: Vec<[u32; 2]> = Vec::new();
        let mut edge_vertex = vec![u32::MAX; nu * nv * 2];
        for iv in 0..nv.saturating_sub(1) {
            for iu in 0..nu.saturating_sub(1) {
                let mut val = [0.0f64; 4];
                let mut case = 0usize;
                for (c, d) in SQUARE_CORNERS.iter().enumerate() {
                    val[c] = value(iu + d[0], iv + d[1]);
                    if val[c] < level {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 15 {
                    continue;
                }
                let centre_below = val.iter().sum::<f64>() * 0.25 < level;
                let mut slot = |e: usize| -> u32 {
                    let (c0, c1) = (e, (e + 1) % 4);
                    let (d0, d1) = (SQUARE_CORNERS[c0], SQUARE_CORNERS[c1]);
                    let dir = if d0[0] != d1[0] { 0 } else { 1 };
                    let (lo, hi, vlo, vhi) = if d0[dir] < d1[dir] {
                        (d0, d1, val[c0], val[c1])
                    } else {
                        (d1, d0, val[c1], val[c0])
                    };
                    let (lu, lv) = (iu + lo[0], iv + lo[1]);
                    let key = (lv * nu + lu) * 2 + dir;
                    if edge_vertex[key] == u32::MAX {
                        edge_vertex[key] = points.len() as u32;
                        let p = edge_point(
                            spec,
                            at(lu, lv),
                            at(iu + hi[0], iv + hi[1]),
                            vlo,
                            vhi,
                            level,
                        );
                        points.push(p);
                    }
                    edge_vertex[key]
                };
                for seg in square_segments(case, centre_below) {
                    segments.push([slot(seg[0]), slot(seg[1])]);
                }
            }
        }
        sets.push(ContourSet {
            level,
            polylines: chain_segments(&points, &segments),
        });
    }
    Ok(sets)
}

/// Joins segments sharing endpoints into open and closed polylines.
fn chain_segments(points: &[Vec3], segments: &[[u32; 2]]) -> Vec<Polyline> {
    let mut adjacent: Vec<Vec<usize>> = vec![Vec::new(); points.len()];
    for (s, seg) in segments.iter().enumerate() {
        adjacent[seg[0] as usize].push(s);
        adjacent[seg[1] as usize].push(s);
    }
    let mut used = vec![false; segments.len()];
    let walk = |start: usize, used: &mut Vec<bool>| -> Vec<usize> {
        let mut chain = vec![start];
        let mut at = start;
        while let Some(&s) = adjacent[at].iter().find(|&&s| !used[s]) {
            used[s] = true;
            let [p, q] = segments[s];
            at = if p as usize == at { q as usize } else { p as usize };
            chain.push(at);
        }
        chain
    };
    let mut out = Vec::new();
    // Open pieces start at slice-boundary endpoints; the rest are loops.
    for start in 0..points.len() {
        if adjacent[start].len() == 1 && !used[adjacent[start][0]] {
            let chain = walk(start, &mut used);
            out.push(Polyline {
                points: chain.iter().map(|&i| points[i]).collect(),
                closed: false,
            });
        }
    }
    for start in 0..points.len() {
        if adjacent[start].iter().any(|&s| !used[s]) {
            let mut chain = walk(start, &mut used);
            let closed = chain.len() > 2 && chain.first() == chain.last();
            if closed {
                chain.pop();
            }
            out.push(Polyline {
                points: chain.iter().map(|&i| points[i]).collect(),
                closed,
            });
        }
    }
    out
}

/// Writes contours as `level,polyline,x,y` rows in the slice plane.
///
/// `x` and `y` are the two in-plane world coordinates of `axis`. Closed
/// polylines repeat their first point at the end.
pub fn write_contours_csv<W: Write>(mut w: W, sets: &[ContourSet], axis: Axis) -> Result<()> {
    let (u, v) = axis.plane();
    writeln!(w, "level,polyline,x,y")?;
    for set in sets {
        for (id, line) in set.polylines.iter().enumerate() {
            let tail = if line.closed { line.points.first() } else { None };
            for p in line.points.iter().chain(tail) {
                writeln!(w, "{},{},{},{}", set.level, id, p[u], p[v])?;
            }
        }
    }
    Ok(())
}

/// Sample-based distances between two surfaces.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SurfaceDistance {
    /// Mean of the sample distances in both directions.
    pub mean: f64,
    /// Largest sample distance in either direction.
    pub hausdorff: f64,
}

/// [`surface_distance_seeded`] with [`DEFAULT_SURFACE_SEED`].
pub fn surface_distance(a: &TriangleMesh, b: &TriangleMesh, n_samples: usize) -> Result<SurfaceDistance> {
    surface_distance_seeded(a, b, n_samples, DEFAULT_SURFACE_SEED)
}

/// Samples `n_samples` area-weighted points on each mesh and measures their
/// distance to the other mesh.
///
/// Each mesh draws from its own stream seeded by `seed`, so swapping the
/// arguments gives the same result.
pub fn surface_distance_seeded(
    a: &TriangleMesh,
    b: &TriangleMesh,
    n_samples: usize,
    seed: u64,
) -> Result<SurfaceDistance> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if n_samples == 0 {
        return Err(Error::InvalidConfig("surface_distance needs at least one sample".into()));
    }
    let ab = directed(a, b, n_samples, seed)?;
    let ba = directed(b, a, n_samples, seed)?;
    let total = ab.0 + ba.0;
    Ok(SurfaceDistance {
        mean: total / (2 * n_samples) as f64,
        hausdorff: ab.1.max(ba.1),
    })
}

/// Sum and maximum of distances from samples on `from` to `to`.
fn directed(from: &TriangleMesh, to: &TriangleMesh, n: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bvh = build_bvh(to)?;
    let mut scratch = QueryScratch::default();
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for (p, _) in from.sample_surface(n, &mut rng) {
        let (_, c) = bvh
            .closest(to, p, None, f64::INFINITY, &mut scratch)
            .ok_or(Error::EmptyMesh)?;
        let d = c.distance();
        sum += d;
        max = max.max(d);
    }
    Ok((sum, max))
}
