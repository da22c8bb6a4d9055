use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::triangle::{ClosestPoint, Region, Triangle};
use super::Vec3;
use crate::error::{Error, Result};

/// Points closer than this to the surface are treated as lying on it, in mm.
pub const ON_SURFACE_TOLERANCE: f64 = 1e-9;

/// Face normals plus angle-weighted vertex and edge pseudonormals.
#[derive(Clone, Debug)]
pub struct Pseudonormals {
    pub face: Vec<Vec3>,
    pub vertex: Vec<Vec3>,
    /// `edge[f][e]` is the pseudonormal of edge `e` of face `f` (see [`Region`]).
    pub edge: Vec<[Vec3; 3]>,
}

impl Pseudonormals {
    /// Normal used for the sign test at a closest point on face `face`.
    #[inline]
    pub fn at(&self, faces: &[[u32; 3]], face: usize, region: Region) -> Vec3 {
        match region {
            Region::Face => self.face[face],
            Region::Edge(e) => self.edge[face][e as usize],
            Region::Vertex(v) => self.vertex[faces[face][v as usize] as usize],
        }
    }
}

/// Indexed triangle surface.
///
/// Built with [`TriangleMesh::new`], which validates indices and rejects degenerate
/// faces. Signed queries additionally need the pseudonormal cache from
/// [`compute_pseudonormals`], which is only available for closed, consistently
/// wound, outward-facing meshes.
#[derive(Clone, Debug)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    triangles: Vec<Triangle>,
    normals: Option<Pseudonormals>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        if let Some(bad) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(Error::format("mesh", format!("vertex {bad} is not finite")));
        }
        let mut triangles = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            for &index in f {
                if index as usize >= vertices.len() {
                    return Err(Error::InvalidIndex {
                        face: fi,
                        index,
                        count: vertices.len(),
                    });
                }
            }
            let [a, b, c] = f.map(|i| vertices[i as usize]);
            triangles.push(Triangle::new(a, b, c)?);
        }
        Ok(TriangleMesh {
            vertices,
            faces,
            triangles,
            normals: None,
        })
    }

    /// Convenience: validate and fill the pseudonormal cache in one step.
    pub fn closed(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        compute_pseudonormals(&TriangleMesh::new(vertices, faces)?)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn triangle(&self, face: usize) -> &Triangle {
        &self.triangles[face]
    }

    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn pseudonormals(&self) -> Option<&Pseudonormals> {
        self.normals.as_ref()
    }

    pub(crate) fn require_pseudonormals(&self) -> Result<&Pseudonormals> {
        self.normals.as_ref().ok_or(Error::MissingPseudonormals)
    }

    /// Volume enclosed by the surface (positive for outward winding).
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| t.a.dot(t.b.cross(t.c)) / 6.0)
            .sum()
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(Triangle::area).sum()
    }

    /// `n` points uniformly distributed by area, with the face each lies on.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(Vec3, usize)> {
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in &self.triangles {
            total += t.area();
            cumulative.push(total);
        }
        if total <= 0.0 {
            return Vec::new();
        }
        (0..n)
            .map(|_| {
                let u = rng.gen_range(0.0..total);
                let face = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
                let (mut r1, mut r2): (f64, f64) = (rng.gen(), rng.gen());
                if r1 + r2 > 1.0 {
                    r1 = 1.0 - r1;
                    r2 = 1.0 - r2;
                }
                let t = &self.triangles[face];
                (t.a + (t.b - t.a) * r1 + (t.c - t.a) * r2, face)
            })
            .collect()
    }

    /// Unique undirected edges as `(lo, hi)` vertex pairs, in first-seen order.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut seen = HashMap::with_capacity(self.faces.len() * 2);
        let mut out = Vec::with_capacity(self.faces.len() * 3 / 2);
        for f in &self.faces {
            for e in 0..3 {
                let (u, v) = (f[e], f[(e + 1) % 3]);
                let key = (u.min(v), u.max(v));
                if seen.insert(key, ()).is_none() {
                    out.push(key);
                }
            }
        }
        out
    }

    pub fn edge_lengths(&self) -> Vec<f64> {
        self.edges()
            .into_iter()
            .map(|(u, v)| self.vertices[u as usize].distance(self.vertices[v as usize]))
            .collect()
    }

    /// V − E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges().len() as i64 + self.faces.len() as i64
    }

    /// Unsigned closest point by exhaustive search. Ties go to the lowest face index.
    pub fn closest_brute_force(&self, p: Vec3) -> Option<(usize, ClosestPoint)> {
        let mut best: Option<(usize, ClosestPoint)> = None;
        for (i, t) in self.triangles.iter().enumerate() {
            let c = t.closest_point(p);
            if best.map_or(true, |(_, b)| c.distance_squared < b.distance_squared) {
                best = Some((i, c));
            }
        }
        best
    }

    /// Sign of the distance at `p` given its closest point on face `face`:
    /// −1 inside, +1 outside (pseudonormal test).
    #[inline]
    pub fn sign_at(&self, p: Vec3, face: usize, closest: &ClosestPoint) -> Result<f64> {
        let n = self
            .require_pseudonormals()?
            .at(&self.faces, face, closest.region);
        Ok(if (p - closest.point).dot(n) < 0.0 {
            -1.0
        } else {
            1.0
        })
    }

    /// Signed distance by exhaustive search (negative inside).
    pub fn signed_distance_brute_force(&self, p: Vec3) -> Result<f64> {
        let (face, c) = self.closest_brute_force(p).ok_or(Error::EmptyMesh)?;
        Ok(self.sign_at(p, face, &c)? * c.distance())
    }

    /// Apply `f` to every vertex, keeping the connectivity.
    pub fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> Result<TriangleMesh> {
        let m = TriangleMesh::new(
            self.vertices.iter().map(|&v| f(v)).collect(),
            self.faces.clone(),
        )?;
        if self.normals.is_some() {
            compute_pseudonormals(&m)
        } else {
            Ok(m)
        }
    }
}

/// Validates closure and winding and fills the pseudonormal cache.
///
/// Vertex pseudonormals are incident face normals weighted by the face's interior
/// angle at that vertex; edge pseudonormals are the normalized sum of the two
/// adjacent face normals.
pub fn compute_pseudonormals(m: &TriangleMesh) -> Result<TriangleMesh> {
    if m.is_empty() {
        return Err(Error::EmptyMesh);
    }
    // (lo, hi) -> [(face, local edge, forward?)]
    let mut incident: HashMap<(u32, u32), Vec<(usize, usize, bool)>> =
        HashMap::with_capacity(m.faces.len() * 2);
    for (fi, f) in m.faces.iter().enumerate() {
        for e in 0..3 {
            let (u, v) = (f[e], f[(e + 1) % 3]);
            incident
                .entry((u.min(v), u.max(v)))
                .or_default()
                .push((fi, e, u < v));
        }
    }
    let mut keys: Vec<_> = incident.keys().copied().collect();
    keys.sort_unstable();
    for key in &keys {
        let uses = &incident[key];
        if uses.len() != 2 {
            return Err(Error::OpenMesh(key.0, key.1, uses.len()));
        }
        if uses[0].2 == uses[1].2 {
            return Err(Error::InconsistentWinding(key.0, key.1));
        }
    }
    let volume = m.signed_volume();
    if volume <= 0.0 {
        return Err(Error::InvertedMesh(volume));
    }

    let face: Vec<Vec3> = m.triangles.iter().map(Triangle::normal).collect();
    let mut vertex = vec![Vec3::ZERO; m.vertices.len()];
    for (fi, (f, t)) in m.faces.iter().zip(&m.triangles).enumerate() {
        for (k, &vi) in f.iter().enumerate() {
            vertex[vi as usize] += face[fi] * t.angle_at(k);
        }
    }
    for v in &mut vertex {
        *v = v.normalized();
    }
    let mut edge = vec![[Vec3::ZERO; 3]; m.faces.len()];
    for key in &keys {
        let uses = &incident[key];
        let n = (face[uses[0].0] + face[uses[1].0]).normalized();
        for &(fi, e, _) in uses {
            edge[fi][e] = n;
        }
    }

    Ok(TriangleMesh {
        vertices: m.vertices.clone(),
        faces: m.faces.clone(),
        triangles: m.triangles.clone(),
        normals: Some(Pseudonormals { face, vertex, edge }),
    })
}

/// Componentwise min/max over the vertices.
pub fn mesh_bounds(m: &TriangleMesh) -> Result<(Vec3, Vec3)> {
    let first = *m.vertices.first().ok_or(Error::EmptyMesh)?;
    Ok(m
        .vertices
        .iter()
        .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))))
}

enum RayOutcome {
    Crossings(usize),
    Ambiguous,
}

/// Möller–Trumbore crossing count along `dir`; ambiguous when the ray grazes an
/// edge or vertex.
fn count_crossings(p: Vec3, dir: Vec3, m: &TriangleMesh) -> RayOutcome {
    const EPS: f64 = 1e-9;
    let mut count = 0;
    for t in &m.triangles {
        let e1 = t.b - t.a;
        let e2 = t.c - t.a;
        let h = dir.cross(e2);
        let det = e1.dot(h);
        let scale = e1.norm() * e2.norm();
        if det.abs() <= EPS * scale {
            // ray parallel to the plane; only a problem if it lies in it
            let n = e1.cross(e2);
            if (p - t.a).dot(n).abs() <= EPS * scale {
                return RayOutcome::Ambiguous;
            }
            continue;
        }
        let inv = 1.0 / det;
        let s = p - t.a;
        let u = s.dot(h) * inv;
        let q = s.cross(e1);
        let v = dir.dot(q) * inv;
        let w = 1.0 - u - v;
        let dist = e2.dot(q) * inv;
        if u < -EPS || v < -EPS || w < -EPS || dist < -EPS {
            continue;
        }
        if u <= EPS || v <= EPS || w <= EPS || dist <= EPS {
            return RayOutcome::Ambiguous;
        }
        count += 1;
    }
    RayOutcome::Crossings(count)
}

/// Inside test by ray parity, independent of the pseudonormal sign.
///
/// Directions are drawn from a fixed-seed stream; a ray that grazes an edge or
/// vertex is discarded and a new direction tried.
pub fn point_in_mesh(p: Vec3, m: &TriangleMesh) -> Result<bool> {
    let (_, c) = m.closest_brute_force(p).ok_or(Error::EmptyMesh)?;
    if c.distance() <= ON_SURFACE_TOLERANCE {
        return Err(Error::OnSurface(c.distance()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_7a11);
    for _ in 0..256 {
        let dir = loop {
            let v = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                break v / n;
            }
        };
        if let RayOutcome::Crossings(n) = count_crossings(p, dir, m) {
            return Ok(n % 2 == 1);
        }
    }
    Err(Error::format(
        "ray query",
        "every sampled ray grazed an edge or vertex",
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes::{icosphere, regular_tetrahedron, unit_cube};

    #[test]
    fn surface_samples_lie_on_the_mesh() {
        let m = unit_cube();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = m.sample_surface(500, &mut rng);
        assert_eq!(pts.len(), 500);
        for (p, f) in &pts {
            assert!(m.triangle(*f).closest_point(*p).distance_squared < 1e-24);
        }
        // each of the six faces has a sixth of the area
        let top = pts.iter().filter(|(p, _)| (p.z - 1.0).abs() < 1e-12).count();
        assert!((50..120).contains(&top), "{top}");
    }

    #[test]
    fn cube_corner_pseudonormals_are_diagonal() {
        let m = unit_cube();
        let pn = m.pseudonormals().unwrap();
        let s = 1.0 / 3f64.sqrt();
        for (v, n) in m.vertices().iter().zip(&pn.vertex) {
            let expect = Vec3::new(
                if v.x > 0.5 { s } else { -s },
                if v.y > 0.5 { s } else { -s },
                if v.z > 0.5 { s } else { -s },
            );
            assert!(n.distance(expect) < 1e-12, "{v:?} -> {n:?}");
        }
    }

    #[test]
    fn tetrahedron_vertex_pseudonormal_opposes_far_face() {
        let m = regular_tetrahedron();
        let pn = m.pseudonormals().unwrap();
        for (vi, n) in pn.vertex.iter().enumerate() {
            let opposite = m
                .faces()
                .iter()
                .position(|f| !f.contains(&(vi as u32)))
                .unwrap();
            assert!((n.dot(pn.face[opposite]) + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pseudonormals_unit_and_aligned() {
        let m = icosphere(1.0, 2);
        let pn = m.pseudonormals().unwrap();
        for n in pn.vertex.iter().chain(pn.face.iter()) {
            assert!((n.norm() - 1.0).abs() < 1e-9);
        }
        for e in pn.edge.iter().flatten() {
            assert!((e.norm() - 1.0).abs() < 1e-9);
        }
        for (f, face) in m.faces().iter().enumerate() {
            for &v in face {
                assert!(pn.vertex[v as usize].dot(pn.face[f]) > 0.0);
            }
        }
    }

    #[test]
    fn open_mesh_reports_edge() {
        let cube = unit_cube();
        let faces = cube.faces()[1..].to_vec();
        let m = TriangleMesh::new(cube.vertices().to_vec(), faces).unwrap();
        let err = compute_pseudonormals(&m).unwrap_err();
        assert!(matches!(err, Error::OpenMesh(_, _, 1)), "{err}");
        assert!(err.to_string().contains("edge ("));
    }

    #[test]
    fn flipped_face_reports_winding() {
        let cube = unit_cube();
        let mut faces = cube.faces().to_vec();
        faces[3].swap(0, 1);
        let m = TriangleMesh::new(cube.vertices().to_vec(), faces).unwrap();
        assert!(matches!(
            compute_pseudonormals(&m),
            Err(Error::InconsistentWinding(..))
        ));
    }

    #[test]
    fn inside_out_rejected() {
        let cube = unit_cube();
        let faces = cube.faces().iter().map(|f| [f[0], f[2], f[1]]).collect();
        let m = TriangleMesh::new(cube.vertices().to_vec(), faces).unwrap();
        assert!(matches!(
            compute_pseudonormals(&m),
            Err(Error::InvertedMesh(_))
        ));
    }

    #[test]
    fn cube_parity() {
        let m = unit_cube();
        assert!(point_in_mesh(Vec3::splat(0.5), &m).unwrap());
        assert!(!point_in_mesh(Vec3::new(2.0, 0.0, 0.0), &m).unwrap());
        assert!(matches!(
            point_in_mesh(Vec3::new(0.5, 0.5, 1.0), &m),
            Err(Error::OnSurface(_))
        ));
    }

    #[test]
    fn bounds() {
        assert_eq!(
            mesh_bounds(&unit_cube()).unwrap(),
            (Vec3::ZERO, Vec3::splat(1.0))
        );
        let tri = TriangleMesh::new(vec![Vec3::ZERO, Vec3::X, Vec3::Y], vec![[0, 1, 2]]).unwrap();
        assert_eq!(
            mesh_bounds(&tri).unwrap(),
            (Vec3::ZERO, Vec3::new(1.0, 1.0, 0.0))
        );
        let empty = TriangleMesh::new(vec![], vec![]).unwrap();
        assert!(matches!(mesh_bounds(&empty), Err(Error::EmptyMesh)));
    }

    #[test]
    fn euler_characteristic_of_closed_shapes() {
        assert_eq!(unit_cube().euler_characteristic(), 2);
        assert_eq!(icosphere(1.0, 3).euler_characteristic(), 2);
    }

    #[test]
    fn parity_agrees_with_pseudonormal_sign_on_sphere() {
        let m = icosphere(1.0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let p = Vec3::new(
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
            );
            let sd = m.signed_distance_brute_force(p).unwrap();
            assert_eq!(point_in_mesh(p, &m).unwrap(), sd < 0.0, "{p:?}");
        }
    }
}
