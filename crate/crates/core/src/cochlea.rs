//! Four-parameter cochlea surface: a circular tube swept along a logarithmic
//! conical spiral.
//!
//! The centerline is `(R cos(t + φ), R sin(t + φ), b t)` with
//! `R = a exp(−α t / 2π)` for `t ∈ [0, 5π]` (2.5 turns). The tube radius shrinks
//! along the spiral independently of the shape parameters and both ends are closed
//! with hemispherical caps.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, TriangleMesh, Vec3};

/// Spiral parameter range, in radians (2.5 turns).
pub const T_MAX: f64 = 5.0 * PI;

pub const PARAM_NAMES: [&str; 4] = ["a", "alpha", "b", "phi"];

/// Valid `(lo, hi)` for `a, alpha, b, phi`.
pub const PARAM_RANGES: [(f64, f64); 4] = [
    (2.0, 5.0),
    (0.0, 1.2),
    (0.05, 0.25),
    (-FRAC_PI_4, FRAC_PI_4),
];

/// The four shape parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    /// Basal spiral radius, mm.
    pub a: f64,
    /// Radial decay per turn (dimensionless).
    pub alpha: f64,
    /// Vertical rise, mm per radian.
    pub b: f64,
    /// Initial angular phase, radians.
    pub phi: f64,
}

impl Default for ShapeParams {
    fn default() -> Self {
        ShapeParams {
            a: 3.5,
            alpha: 0.6,
            b: 0.15,
            phi: 0.0,
        }
    }
}

impl ShapeParams {
    pub fn new(a: f64, alpha: f64, b: f64, phi: f64) -> Result<Self> {
        let p = ShapeParams { a, alpha, b, phi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for ((name, (lo, hi)), value) in PARAM_NAMES.iter().zip(PARAM_RANGES).zip(self.to_array()) {
            // NaN fails both comparisons
            if !(value >= lo && value <= hi) {
                return Err(Error::OutOfRange {
                    name,
                    value,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.a, self.alpha, self.b, self.phi]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        ShapeParams {
            a: v[0],
            alpha: v[1],
            b: v[2],
            phi: v[3],
        }
    }

    /// Each parameter mapped linearly from its range onto `[-1, 1]`.
    pub fn normalized(&self) -> [f64; 4] {
        let v = self.to_array();
        std::array::from_fn(|i| {
            let (lo, hi) = PARAM_RANGES[i];
            2.0 * (v[i] - lo) / (hi - lo) - 1.0
        })
    }

    pub fn from_normalized(u: [f64; 4]) -> Self {
        ShapeParams::from_array(std::array::from_fn(|i| {
            let (lo, hi) = PARAM_RANGES[i];
            lo + (u[i] + 1.0) * 0.5 * (hi - lo)
        }))
    }
}

/// Tube discretization and radius law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TessellationSpec {
    /// Target edge length, mm.
    pub target_edge: f64,
    pub t_max: f64,
    /// Tube radius at the base, mm.
    pub rho0: f64,
    /// Relative radius decay per turn.
    pub rho_decay: f64,
}

impl Default for TessellationSpec {
    fn default() -> Self {
        TessellationSpec {
            target_edge: 0.30,
            t_max: T_MAX,
            rho0: 0.6,
            rho_decay: 0.3,
        }
    }
}

impl TessellationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_edge > 0.15 && self.target_edge < 0.45) {
            return Err(Error::OutOfRange {
                name: "target_edge",
                value: self.target_edge,
                lo: 0.15,
                hi: 0.45,
            });
        }
        if !(self.t_max > 0.0 && self.rho0 > 0.0 && self.rho_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!("bad tessellation spec {self:?}")));
        }
        Ok(())
    }

    /// Vertices per ring, fixed for all shape parameters.
    pub fn ring_size(&self) -> usize {
        let rho_mid = tube_radius(self, 0.5 * self.t_max);
        ((TAU * rho_mid / self.target_edge).round() as usize).max(6)
    }

    /// Distance between consecutive rings along the centerline. Rings are staggered by
    /// half a step, so this gives near-equilateral triangles.
    pub fn ring_spacing(&self) -> f64 {
        self.target_edge * 3f64.sqrt() / 2.0
    }
}

#[inline]
fn spiral(p: &ShapeParams, t: f64) -> Vec3 {
    let r = p.a * (-p.alpha * t / TAU).exp();
    let (s, c) = (t + p.phi).sin_cos();
    Vec3::new(r * c, r * s, p.b * t)
}

#[inline]
fn spiral_tangent(p: &ShapeParams, t: f64) -> Vec3 {
    let r = p.a * (-p.alpha * t / TAU).exp();
    let dr = -p.alpha / TAU * r;
    let (s, c) = (t + p.phi).sin_cos();
    Vec3::new(dr * c - r * s, dr * s + r * c, p.b).normalized()
}

/// Point on the centerline at spiral angle `t ∈ [0, 5π]`.
pub fn centerline_point(p: &ShapeParams, t: f64) -> Result<Vec3> {
    p.validate()?;
    if !(0.0..=T_MAX).contains(&t) {
        return Err(Error::OutOfRange {
            name: "t",
            value: t,
            lo: 0.0,
            hi: T_MAX,
        });
    }
    Ok(spiral(p, t))
}

/// Tube radius at spiral angle `t`: `rho0 exp(−rho_decay t / 2π)`.
pub fn tube_radius(spec: &TessellationSpec, t: f64) -> f64 {
    spec.rho0 * (-spec.rho_decay * t / TAU).exp()
}

/// Centerline stations, equally spaced in arc length.
fn stations(p: &ShapeParams, spec: &TessellationSpec) -> Vec<f64> {
    const FINE: usize = 4096;
    let mut cumulative = Vec::with_capacity(FINE + 1);
    cumulative.push(0.0);
    let mut prev = spiral(p, 0.0);
    for i in 1..=FINE {
        let q = spiral(p, spec.t_max * i as f64 / FINE as f64);
        cumulative.push(cumulative[i - 1] + prev.distance(q));
        prev = q;
    }
    let length = cumulative[FINE];
    let segments = ((length / spec.ring_spacing()).ceil() as usize).max(4);
    let mut ts = Vec::with_capacity(segments + 1);
    let mut cursor = 0;
    for i in 0..=segments {
        let s = length * i as f64 / segments as f64;
        while cursor + 1 < FINE && cumulative[cursor + 1] < s {
            cursor += 1;
        }
        let span = cumulative[cursor + 1] - cumulative[cursor];
        let frac = if span > 0.0 {
            ((s - cumulative[cursor]) / span).clamp(0.0, 1.0)
        } else {
            0.0
        };
        ts.push(spec.t_max * (cursor as f64 + frac) / FINE as f64);
    }
    ts[segments] = spec.t_max;
    ts
}

/// A ring frame: centre, unit tangent and the transported normal.
#[derive(Clone, Copy, Debug)]
pub struct Frame {
    pub centre: Vec3,
    pub tangent: Vec3,
    pub normal: Vec3,
}

impl Frame {
    pub fn binormal(&self) -> Vec3 {
        self.tangent.cross(self.normal)
    }
}

/// Rotation-minimizing frames along the centerline stations (double reflection).
///
/// The first normal is the radial direction at `t = 0`, so a change of `φ` rotates
/// every frame rigidly about z.
pub fn transport_frames(p: &ShapeParams, spec: &TessellationSpec) -> Vec<Frame> {
    let ts = stations(p, spec);
    let mut frames = Vec::with_capacity(ts.len());
    let t0 = spiral_tangent(p, ts[0]);
    let radial = Vec3::new(p.phi.cos(), p.phi.sin(), 0.0);
    let n0 = (radial - t0 * radial.dot(t0)).normalized();
    frames.push(Frame {
        centre: spiral(p, ts[0]),
        tangent: t0,
        normal: n0,
    });
    for &t in &ts[1..] {
        let prev = *frames.last().unwrap();
        let centre = spiral(p, t);
        let tangent = spiral_tangent(p, t);
        let v1 = centre - prev.centre;
        let c1 = v1.norm_squared();
        let r_l = prev.normal - v1 * (2.0 / c1 * v1.dot(prev.normal));
        let t_l = prev.tangent - v1 * (2.0 / c1 * v1.dot(prev.tangent));
        let v2 = tangent - t_l;
        let c2 = v2.norm_squared();
        let mut normal = if c2 > 1e-300 {
            r_l - v2 * (2.0 / c2 * v2.dot(r_l))
        } else {
            r_l
        };
        normal = (normal - tangent * normal.dot(tangent)).normalized();
        frames.push(Frame {
            centre,
            tangent,
            normal,
        });
    }
    frames
}

/// Closed, outward-oriented tube mesh for `p`.
pub fn tessellate(p: &ShapeParams, spec: &TessellationSpec) -> Result<TriangleMesh> {
    p.validate()?;
    spec.validate()?;
    let frames = transport_frames(p, spec);
    let ts = stations(p, spec);
    let n = spec.ring_size();
    let h = spec.ring_spacing();

    // (frame, radius, offset along the tangent)
    let mut rings: Vec<(Frame, f64, f64)> = Vec::new();
    let first = frames[0];
    let last = *frames.last().unwrap();
    let rho_start = tube_radius(spec, ts[0]);
    let rho_end = tube_radius(spec, *ts.last().unwrap());
    let cap_rings = |rho: f64| ((FRAC_PI_2 * rho / h).ceil() as usize).max(2);

    let start_caps = cap_rings(rho_start);
    for m in (1..start_caps).rev() {
        let theta = FRAC_PI_2 * m as f64 / start_caps as f64;
        rings.push((first, rho_start * theta.cos(), -rho_start * theta.sin()));
    }
    for (f, &t) in frames.iter().zip(&ts) {
        rings.push((*f, tube_radius(spec, t), 0.0));
    }
    let end_caps = cap_rings(rho_end);
    for m in 1..end_caps {
        let theta = FRAC_PI_2 * m as f64 / end_caps as f64;
        rings.push((last, rho_end * theta.cos(), rho_end * theta.sin()));
    }

    let mut vertices = Vec::with_capacity(rings.len() * n + 2);
    vertices.push(first.centre - first.tangent * rho_start);
    for (r, (frame, radius, along)) in rings.iter().enumerate() {
        let b = frame.binormal();
        let centre = frame.centre + frame.tangent * *along;
        for k in 0..n {
            let angle = (k as f64 + 0.5 * r as f64) * TAU / n as f64;
            let (s, c) = angle.sin_cos();
            vertices.push(centre + (frame.normal * c + b * s) * *radius);
        }
    }
    vertices.push(last.centre + last.tangent * rho_end);
    let end_pole = (vertices.len() - 1) as u32;

    let ring = |r: usize, k: usize| (1 + r * n + k % n) as u32;
    let mut faces = Vec::with_capacity(2 * n * rings.len());
    for k in 0..n {
        faces.push([ring(0, k), 0, ring(0, k + 1)]);
    }
    for r in 0..rings.len() - 1 {
        for k in 0..n {
            faces.push([ring(r, k), ring(r, k + 1), ring(r + 1, k)]);
            faces.push([ring(r + 1, k), ring(r, k + 1), ring(r + 1, k + 1)]);
        }
    }
    let lr = rings.len() - 1;
    for k in 0..n {
        faces.push([ring(lr, k), ring(lr, k + 1), end_pole]);
    }
    TriangleMesh::closed(vertices, faces)
}

/// `n⁴` parameter combinations on a uniform lattice with endpoints included,
/// ordered with `a` slowest and `phi` fastest.
pub fn param_grid(n_per_axis: usize) -> Result<Vec<ShapeParams>> {
    if n_per_axis < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 samples per axis, got {n_per_axis}"
        )));
    }
    let axis = |i: usize, k: usize| {
        let (lo, hi) = PARAM_RANGES[i];
        if k + 1 == n_per_axis {
            hi
        } else {
            lo + (hi - lo) * k as f64 / (n_per_axis - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(n_per_axis.pow(4));
    for i0 in 0..n_per_axis {
        for i1 in 0..n_per_axis {
            for i2 in 0..n_per_axis {
                for i3 in 0..n_per_axis {
                    out.push(ShapeParams::from_array([
                        axis(0, i0),
                        axis(1, i1),
                        axis(2, i2),
                        axis(3, i3),
                    ]));
                }
            }
        }
    }
    Ok(out)
}

/// One draw with every parameter uniform over its range.
pub fn sample_random_params<R: Rng + ?Sized>(rng: &mut R) -> ShapeParams {
    ShapeParams::from_array(std::array::from_fn(|i| {
        let (lo, hi) = PARAM_RANGES[i];
        rng.gen_range(lo..=hi)
    }))
}

/// The 50 × 50 × 60 grid at 0.2 mm with origin (−5, −5, −2) mm.
pub fn default_grid_spec() -> GridSpec {
    GridSpec {
        origin: Vec3::new(-5.0, -5.0, -2.0),
        spacing: 0.2,
        dims: [50, 50, 60],
    }
}
