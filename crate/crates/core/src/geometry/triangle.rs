use super::Vec3;
use crate::error::{Error, Result};

/// Triangles with an area at or below this are rejected, in mm².
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Which feature of a triangle a closest point lies on.
///
/// Edges are numbered `0: a→b`, `1: b→c`, `2: c→a`; vertices `0: a`, `1: b`, `2: c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    Face,
    Edge(u8),
    Vertex(u8),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosestPoint {
    pub distance_squared: f64,
    pub point: Vec3,
    pub region: Region,
}

impl ClosestPoint {
    #[inline]
    pub fn distance(&self) -> f64 {
        self.distance_squared.sqrt()
    }
}

/// A triangle, counter-clockwise when seen from outside the surface it belongs to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangle {
    pub a: Vec3,
    pub b: Vec3,
    pub c: Vec3,
}

impl Triangle {
    /// Builds a triangle, rejecting degenerate (near zero area) input.
    pub fn new(a: Vec3, b: Vec3, c: Vec3) -> Result<Self> {
        let t = Triangle { a, b, c };
        let area = t.area();
        if !(area > MIN_TRIANGLE_AREA) {
            return Err(Error::DegenerateTriangle { area });
        }
        Ok(t)
    }

    pub fn vertex(&self, i: usize) -> Vec3 {
        [self.a, self.b, self.c][i]
    }

    pub fn area(&self) -> f64 {
        0.5 * (self.b - self.a).cross(self.c - self.a).norm()
    }

    /// Unit normal following the right-hand rule on `a, b, c`.
    pub fn normal(&self) -> Vec3 {
        (self.b - self.a).cross(self.c - self.a).normalized()
    }

    pub fn centroid(&self) -> Vec3 {
        (self.a + self.b + self.c) / 3.0
    }

    /// Interior angle at vertex `i`, in radians.
    pub fn angle_at(&self, i: usize) -> f64 {
        let (p, q, r) = match i {
            0 => (self.a, self.b, self.c),
            1 => (self.b, self.c, self.a),
            _ => (self.c, self.a, self.b),
        };
        let u = (q - p).normalized();
        let v = (r - p).normalized();
        u.dot(v).clamp(-1.0, 1.0).acos()
    }

    /// Closest point on the triangle to `p` together with the feature it lies on.
    ///
    /// Voronoi-region walk over the vertices, edges and interior.
    #[inline]
    pub fn closest_point(&self, p: Vec3) -> ClosestPoint {
        let (a, b, c) = (self.a, self.b, self.c);
        let ab = b - a;
        let ac = c - a;
        let ap = p - a;
        let d1 = ab.dot(ap);
        let d2 = ac.dot(ap);
        if d1 <= 0.0 && d2 <= 0.0 {
            return finish(p, a, Region::Vertex(0));
        }

        let bp = p - b;
        let d3 = ab.dot(bp);
        let d4 = ac.dot(bp);
        if d3 >= 0.0 && d4 <= d3 {
            return finish(p, b, Region::Vertex(1));
        }

        let vc = d1 * d4 - d3 * d2;
        if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
            let v = d1 / (d1 - d3);
            return finish(p, a + ab * v, Region::Edge(0));
        }

        let cp = p - c;
        let d5 = ab.dot(cp);
        let d6 = ac.dot(cp);
        if d6 >= 0.0 && d5 <= d6 {
            return finish(p, c, Region::Vertex(2));
        }

        let vb = d5 * d2 - d1 * d6;
        if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
            let w = d2 / (d2 - d6);
            return finish(p, a + ac * w, Region::Edge(2));
        }

        let va = d3 * d6 - d5 * d4;
        if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
            let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
            return finish(p, b + (c - b) * w, Region::Edge(1));
        }

        let denom = 1.0 / (va + vb + vc);
        let v = vb * denom;
        let w = vc * denom;
        finish(p, a + ab * v + ac * w, Region::Face)
    }
}

#[inline(always)]
fn finish(p: Vec3, q: Vec3, region: Region) -> ClosestPoint {
    ClosestPoint {
        distance_squared: (p - q).norm_squared(),
        point: q,
        region,
    }
}

/// Distance from `p` to `t` and the closest point, as a free function.
pub fn point_triangle_closest(p: Vec3, t: &Triangle) -> ClosestPoint {
    t.closest_point(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_right() -> Triangle {
        Triangle::new(Vec3::ZERO, Vec3::X, Vec3::Y).unwrap()
    }

    /// Minimum over a dense barycentric lattice; independent of the region walk.
    fn sampled_min_distance(p: Vec3, t: &Triangle, n: usize) -> (f64, Vec3) {
        let mut best = (f64::INFINITY, Vec3::ZERO);
        for i in 0..=n {
            for j in 0..=(n - i) {
                let u = i as f64 / n as f64;
                let v = j as f64 / n as f64;
                let q = t.a + (t.b - t.a) * u + (t.c - t.a) * v;
                let d = p.distance(q);
                if d < best.0 {
                    best = (d, q);
                }
            }
        }
        best
    }

    #[test]
    fn point_on_vertex() {
        let r = unit_right().closest_point(Vec3::ZERO);
        assert_eq!(r.distance(), 0.0);
        assert_eq!(r.point, Vec3::ZERO);
        assert_eq!(r.region, Region::Vertex(0));
    }

    #[test]
    fn projection_inside_face() {
        let r = unit_right().closest_point(Vec3::new(0.25, 0.25, 2.0));
        assert!((r.distance() - 2.0).abs() < 1e-15);
        assert!(r.point.distance(Vec3::new(0.25, 0.25, 0.0)) < 1e-15);
        assert_eq!(r.region, Region::Face);
    }

    #[test]
    fn closest_on_hypotenuse() {
        let t = unit_right();
        let p = Vec3::new(2.0, 2.0, 1.0);
        let (oracle, _) = sampled_min_distance(p, &t, 400);
        // frozen from the sampling oracle above: sqrt(5.5)
        let expected = 2.345_207_879_911_715;
        assert!((oracle - expected).abs() < 1e-6);
        let r = t.closest_point(p);
        assert!((r.distance() - expected).abs() < 1e-12);
        assert!(r.point.distance(Vec3::new(0.5, 0.5, 0.0)) < 1e-12);
        assert_eq!(r.region, Region::Edge(1));
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let err = Triangle::new(Vec3::ZERO, Vec3::X, Vec3::X * 2.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateTriangle { .. }));
        assert!(err.to_string().contains("degenerate"));
    }

    fn arb_vec() -> impl Strategy<Value = Vec3> {
        (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn never_farther_than_a_vertex(p in arb_vec(), a in arb_vec(), b in arb_vec(), c in arb_vec()) {
            prop_assume!(Triangle::new(a, b, c).is_ok());
            let t = Triangle::new(a, b, c).unwrap();
            let d = t.closest_point(p).distance();
            for v in [a, b, c] {
                prop_assert!(d <= p.distance(v) + 1e-12);
            }
        }

        #[test]
        fn vertex_order_does_not_change_distance(p in arb_vec(), a in arb_vec(), b in arb_vec(), c in arb_vec()) {
            prop_assume!(Triangle::new(a, b, c).is_ok());
            let d1 = Triangle::new(a, b, c).unwrap().closest_point(p).distance();
            let d2 = Triangle::new(b, a, c).unwrap().closest_point(p).distance();
            let d3 = Triangle::new(c, b, a).unwrap().closest_point(p).distance();
            prop_assert!((d1 - d2).abs() < 1e-9);
            prop_assert!((d1 - d3).abs() < 1e-9);
        }

        #[test]
        fn matches_sampling_oracle(p in arb_vec(), a in arb_vec(), b in arb_vec(), c in arb_vec()) {
            prop_assume!(Triangle::new(a, b, c).map(|t| t.area() > 0.05).unwrap_or(false));
            let t = Triangle::new(a, b, c).unwrap();
            let r = t.closest_point(p);
            let (oracle, _) = sampled_min_distance(p, &t, 120);
            // lattice spacing bounds how far the oracle can sit above the true minimum
            let slack = 6.0 * (a.distance(b).max(b.distance(c)).max(c.distance(a))) / 120.0;
            prop_assert!(r.distance() <= oracle + 1e-12);
            prop_assert!(oracle - r.distance() <= slack);
        }
    }
}
