use serde::{Deserialize, Serialize};

use super::Vec3;
use crate::error::{Error, Result};

/// Grid axis, used to select slices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }

    /// The two in-slice axes, in (u, v) order.
    pub fn plane(self) -> (usize, usize) {
        match self {
            Axis::X => (1, 2),
            Axis::Y => (0, 2),
            Axis::Z => (0, 1),
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(Error::InvalidConfig(format!("unknown axis `{s}`"))),
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(["x", "y", "z"][self.index()])
    }
}

/// Regular isotropic sampling lattice. Voxel `(i, j, k)` is centred at
/// `origin + spacing * (i, j, k)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec3,
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: Vec3, spacing: f64, dims: [usize; 3]) -> Result<Self> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidGrid(format!("spacing {spacing} must be positive")));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidGrid(format!(
                "dims {dims:?} must be at least 2 along every axis"
            )));
        }
        if !origin.is_finite() {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(GridSpec {
            origin,
            spacing,
            dims,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index, x fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    pub fn center_of(&self, index: usize) -> Vec3 {
        let [i, j, k] = self.coords(index);
        self.voxel_center(i, j, k)
    }

    /// Centre of the last voxel.
    pub fn max_center(&self) -> Vec3 {
        self.voxel_center(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1)
    }

    /// Box spanned by the voxel centres.
    pub fn contains(&self, p: Vec3) -> bool {
        let hi = self.max_center();
        (0..3).all(|a| p[a] > self.origin[a] && p[a] < hi[a])
    }
}

/// A scalar field over a [`GridSpec`], x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrid {
    spec: GridSpec,
    values: Vec<f32>,
}

impl ScalarGrid {
    pub fn new(spec: GridSpec, values: Vec<f32>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {:?} grid ({} voxels)",
                values.len(),
                spec.dims,
                spec.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("value at index {i} is not finite")));
        }
        Ok(ScalarGrid { spec, values })
    }

    /// Samples `f` at every voxel centre.
    pub fn from_fn(spec: GridSpec, f: impl Fn(Vec3) -> f64) -> Self {
        let values = (0..spec.len()).map(|i| f(spec.center_of(i)) as f32).collect();
        ScalarGrid { spec, values }
    }

    pub fn filled(spec: GridSpec, value: f32) -> Self {
        ScalarGrid {
            spec,
            values: vec![value; spec.len()],
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.spec.index(i, j, k)]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> ScalarGrid {
        ScalarGrid {
            spec: self.spec,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Mean squared difference; errors when the grid specs differ.
    pub fn mse(&self, other: &ScalarGrid) -> Result<f64> {
        self.check_same_spec(other)?;
        let sum: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        Ok(sum / self.values.len() as f64)
    }

    pub fn max_abs_diff(&self, other: &ScalarGrid) -> Result<f64> {
        self.check_same_spec(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn check_same_spec(&self, other: &ScalarGrid) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::ShapeMismatch(format!(
                "grid {:?} vs {:?}",
                self.spec, other.spec
            )));
        }
        Ok(())
    }

    /// Central-difference gradient magnitude at an interior voxel.
    pub fn gradient_norm(&self, i: usize, j: usize, k: usize) -> Option<f64> {
        let [nx, ny, nz] = self.spec.dims;
        if i == 0 || j == 0 || k == 0 || i + 1 >= nx || j + 1 >= ny || k + 1 >= nz {
            return None;
        }
        let h2 = 2.0 * self.spec.spacing;
        let gx = (self.get(i + 1, j, k) as f64 - self.get(i - 1, j, k) as f64) / h2;
        let gy = (self.get(i, j + 1, k) as f64 - self.get(i, j - 1, k) as f64) / h2;
        let gz = (self.get(i, j, k + 1) as f64 - self.get(i, j, k - 1) as f64) / h2;
        Some((gx * gx + gy * gy + gz * gz).sqrt())
    }
}

/// Boolean occupancy over a [`GridSpec`], x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryGrid {
    spec: GridSpec,
    values: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(spec: GridSpec, values: Vec<bool>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {:?} grid",
                values.len(),
                spec.dims
            )));
        }
        Ok(BinaryGrid { spec, values })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.values[self.spec.index(i, j, k)]
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_specs() {
        assert!(GridSpec::new(Vec3::ZERO, 0.0, [2, 2, 2]).is_err());
        assert!(GridSpec::new(Vec3::ZERO, 0.1, [1, 2, 2]).is_err());
        assert!(GridSpec::new(Vec3::ZERO, 0.1, [2, 2, 2]).is_ok());
    }

    #[test]
    fn index_is_x_fastest() {
        let g = GridSpec::new(Vec3::new(-1.0, 0.0, 2.0), 0.5, [3, 4, 5]).unwrap();
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 3);
        assert_eq!(g.index(0, 0, 1), 12);
        assert_eq!(g.coords(g.index(2, 3, 4)), [2, 3, 4]);
        assert_eq!(g.voxel_center(2, 1, 0), Vec3::new(0.0, 0.5, 2.0));
    }

    #[test]
    fn grid_length_checked() {
        let g = GridSpec::new(Vec3::ZERO, 1.0, [2, 2, 2]).unwrap();
        assert!(ScalarGrid::new(g, vec![0.0; 7]).is_err());
        assert!(ScalarGrid::new(g, vec![f32::NAN; 8]).is_err());
        assert!(ScalarGrid::new(g, vec![0.0; 8]).is_ok());
    }
}
