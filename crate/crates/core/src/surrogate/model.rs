use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arch::{Architecture, Layout, TensorInfo};
use super::network;
use super::Real;
use crate::cochlea::{ShapeParams, PARAM_RANGES};
use crate::engines::pool;
use crate::error::{Error, Result};
use crate::geometry::ScalarGrid;

/// Provenance of a set of weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub steps: usize,
    pub final_loss: Option<f64>,
}

/// Parameter-to-grid decoder: architecture, flat weights and normalization.
#[derive(Clone, Debug)]
pub struct SurrogateModel {
    arch: Architecture,
    layout: Layout,
    weights: Vec<f32>,
    param_ranges: [(f64, f64); 4],
    pub meta: TrainingMeta,
}

impl PartialEq for SurrogateModel {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.weights == other.weights
            && self.param_ranges == other.param_ranges
            && self.meta == other.meta
    }
}

/// Default architecture with seeded scaled-uniform weights.
pub fn init_model(seed: u64) -> SurrogateModel {
    init_model_with(Architecture::default(), seed).expect("default architecture is valid")
}

pub fn init_model_with(arch: Architecture, seed: u64) -> Result<SurrogateModel> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = vec![0.0f32; arch.weight_count()];
    for t in arch.tensors() {
        let s = 1.0 / (t.fan_in as f64).sqrt();
        for v in &mut weights[t.range()] {
            *v = rng.gen_range(-s..s) as f32;
        }
    }
    SurrogateModel::from_parts(arch, weights, PARAM_RANGES, TrainingMeta { seed, ..Default::default() })
}

impl SurrogateModel {
    pub fn from_parts(
        arch: Architecture,
        weights: Vec<f32>,
        param_ranges: [(f64, f64); 4],
        meta: TrainingMeta,
    ) -> Result<Self> {
        arch.validate()?;
        let expected = arch.weight_count();
        if weights.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for an architecture of {expected}",
                weights.len()
            )));
        }
        if param_ranges != PARAM_RANGES {
            return Err(Error::InvalidConfig("normalization ranges differ from the parameter ranges".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig("non-finite weight".into()));
        }
        let layout = Layout::new(&arch);
        Ok(SurrogateModel { arch, layout, weights, param_ranges, meta })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }

    pub fn param_ranges(&self) -> &[(f64, f64); 4] {
        &self.param_ranges
    }

    pub fn tensors(&self) -> Vec<TensorInfo> {
        self.arch.tensors()
    }

    pub fn tensor(&self, name: &str) -> Option<TensorInfo> {
        self.arch.tensors().into_iter().find(|t| t.name == name)
    }

    /// Names of the per-stage conditioning weight tensors.
    pub fn conditioning_tensors(&self) -> Vec<TensorInfo> {
        self.tensors()
            .into_iter()
            .filter(|t| t.name.ends_with("scale.weight") || t.name.ends_with("shift.weight"))
            .collect()
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    fn normalized(&self, p: &ShapeParams) -> Result<[f32; 4]> {
        p.validate()?;
        Ok(p.normalized().map(|v| v as f32))
    }

    /// Decodes the grid with separate inputs for the embedding and the
    /// conditioning branch.
    pub fn forward_split(&self, embed: &ShapeParams, cond: &ShapeParams) -> Result<ScalarGrid> {
        let out = network::forward(&self.layout, &self.weights, &self.normalized(embed)?, &self.normalized(cond)?);
        ScalarGrid::new(self.arch.grid, out)
    }
}

/// Decodes the SDM for `p`.
pub fn forward(model: &SurrogateModel, p: &ShapeParams) -> Result<ScalarGrid> {
    model.forward_split(p, p)
}

/// Mean squared voxel error over `batch` and its gradient, with weights and
/// activations in `T`. Per-sample gradients are summed in batch order.
pub fn loss_and_gradient_raw<T: Real>(
    model: &SurrogateModel,
    weights: &[T],
    batch: &[([T; 4], &[T])],
) -> Result<(f64, Vec<T>)> {
    let layout = model.layout();
    if weights.len() != layout.total {
        return Err(Error::ShapeMismatch("weight vector length".into()));
    }
    let n_out = model.arch.grid.len();
    if batch.is_empty() {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    if let Some((_, t)) = batch.iter().find(|(_, t)| t.len() != n_out) {
        return Err(Error::ShapeMismatch(format!("target of {} voxels, model emits {n_out}", t.len())));
    }
    let denom = T::from(batch.len() * n_out).unwrap();
    let two = T::from(2.0).unwrap();
    let per_sample = |(p, target): &([T; 4], &[T])| {
        let trace = network::forward_trace(layout, weights, p, p);
        let mut sq = 0.0f64;
        let g_out: Vec<T> = trace
            .out
            .iter()
            .zip(target.iter())
            .map(|(&y, &t)| {
                let d = y - t;
                sq += d.to_f64().unwrap().powi(2);
                two * d / denom
            })
            .collect();
        let mut grad = vec![T::zero(); weights.len()];
        network::backward(layout, weights, &trace, &g_out, &mut grad);
        (sq, grad)
    };
    let parts: Vec<(f64, Vec<T>)> = pool().install(|| batch.par_iter().map(per_sample).collect());
    let mut total = 0.0;
    let mut grad = vec![T::zero(); weights.len()];
    for (sq, g) in parts {
        total += sq;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a = *a + *b;
        }
    }
    Ok((total / (batch.len() * n_out) as f64, grad))
}

/// Mean squared voxel error of the model over `(params, target)` pairs and its
/// gradient with respect to the flat weight vector.
pub fn loss_and_gradient(model: &SurrogateModel, batch: &[(ShapeParams, ScalarGrid)]) -> Result<(f64, Vec<f32>)> {
    let mut inputs = Vec::with_capacity(batch.len());
    for (p, target) in batch {
        if target.spec() != &model.arch.grid {
            return Err(Error::ShapeMismatch(format!(
                "target grid {:?} differs from the model grid {:?}",
                target.spec().dims,
                model.arch.grid.dims
            )));
        }
        inputs.push((model.normalized(p)?, target.values()));
    }
    loss_and_gradient_raw(model, &model.weights, &inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cochlea::default_grid_spec;

    #[test]
    fn init_is_deterministic_and_sized() {
        let a = init_model(7);
        let b = init_model(7);
        assert_eq!(a.weights(), b.weights());
        assert_ne!(a.weights(), init_model(8).weights());
        // 4→64→256→4800, 32→16→8→8 convolutions, scale/shift, head
        let expected = (4 * 64 + 64)
            + (64 * 256 + 256)
            + (256 * 4800 + 4800)
            + (27 * 32 * 16 + 16)
            + 2 * (16 * 4 + 16)
            + (27 * 16 * 8 + 8)
            + 2 * (8 * 4 + 8)
            + (27 * 8 * 8 + 8)
            + 2 * (8 * 4 + 8)
            + (8 + 1);
        assert_eq!(a.weights().len(), expected);
        assert_eq!(expected, 1_269_929);
    }

    #[test]
    fn untrained_forward_is_bounded_and_repeatable() {
        let m = init_model(1);
        let p = ShapeParams::default();
        let g = forward(&m, &p).unwrap();
        assert_eq!(g.spec(), &default_grid_spec());
        assert_eq!(g.spec().dims, [50, 50, 60]);
        assert!(g.values().iter().all(|v| v.is_finite() && v.abs() < 100.0));
        let again = forward(&m, &p).unwrap();
        assert!(g.values().iter().zip(again.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn out_of_range_params_are_rejected() {
        let m = init_model_with(Architecture::reduced(), 1).unwrap();
        let p = ShapeParams { a: 5.5, ..Default::default() };
        assert!(matches!(forward(&m, &p), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn weight_count_mismatch_is_rejected() {
        let arch = Architecture::reduced();
        let n = arch.weight_count();
        let err = SurrogateModel::from_parts(arch, vec![0.0; n - 1], PARAM_RANGES, TrainingMeta::default());
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zeroed_conditioning_ignores_conditioning_input() {
        let mut m = init_model_with(Architecture::reduced(), 3).unwrap();
        for t in m.conditioning_tensors() {
            m.weights_mut()[t.range()].iter_mut().for_each(|w| *w = 0.0);
        }
        let p = ShapeParams::default();
        let q1 = ShapeParams::new(2.1, 0.1, 0.06, -0.7).unwrap();
        let q2 = ShapeParams::new(4.9, 1.1, 0.24, 0.7).unwrap();
        let a = m.forward_split(&p, &q1).unwrap();
        let b = m.forward_split(&p, &q2).unwrap();
        assert_eq!(a.values(), b.values());
        // with conditioning weights present the branch matters
        let m = init_model_with(Architecture::reduced(), 3).unwrap();
        assert_ne!(m.forward_split(&p, &q1).unwrap().values(), m.forward_split(&p, &q2).unwrap().values());
    }

    #[test]
    fn target_equal_to_output_gives_zero_loss_and_gradient() {
        let m = init_model_with(Architecture::reduced(), 5).unwrap();
        let p = ShapeParams::default();
        let out = forward(&m, &p).unwrap();
        let (loss, grad) = loss_and_gradient(&m, &[(p, out)]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_is_batch_permutation_invariant() {
        let m = init_model_with(Architecture::reduced(), 5).unwrap();
        let spec = m.architecture().grid;
        let p1 = ShapeParams::default();
        let p2 = ShapeParams::new(2.5, 0.2, 0.1, 0.3).unwrap();
        let t1 = ScalarGrid::filled(spec, 0.5);
        let t2 = ScalarGrid::filled(spec, -0.1);
        let (l12, _) = loss_and_gradient(&m, &[(p1, t1.clone()), (p2, t2.clone())]).unwrap();
        let (l21, _) = loss_and_gradient(&m, &[(p2, t2), (p1, t1)]).unwrap();
        assert!((l12 - l21).abs() <= 1e-12 * l12.abs());
    }

    #[test]
    fn target_on_another_grid_is_rejected() {
        let m = init_model_with(Architecture::reduced(), 5).unwrap();
        let t = ScalarGrid::filled(default_grid_spec(), 0.0);
        let err = loss_and_gradient(&m, &[(ShapeParams::default(), t)]);
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    /// Central differences in f64 on the reduced net.
    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n_out = Architecture::reduced().grid.len();
        let samples: Vec<([f64; 4], Vec<f64>)> = (0..2)
            .map(|_| {
                let p = [0; 4].map(|_| rng.gen_range(-1.0..1.0));
                let t = (0..n_out).map(|_| rng.gen_range(-0.2..1.3)).collect();
                (p, t)
            })
            .collect();
        let batch: Vec<([f64; 4], &[f64])> = samples.iter().map(|(p, t)| (*p, t.as_slice())).collect();
        // single-channel stages can start fully clipped; take the first seed whose
        // head sees a live signal
        let m = (0..64)
            .map(|seed| init_model_with(Architecture::reduced(), seed).unwrap())
            .find(|m| {
                let w: Vec<f64> = m.weights().iter().map(|&v| v as f64).collect();
                let (_, g) = loss_and_gradient_raw(m, &w, &batch).unwrap();
                let head = m.tensor("head.weight").unwrap();
                g[head.range()].iter().all(|&v| v != 0.0)
            })
            .expect("a live reduced net");
        let w: Vec<f64> = m.weights().iter().map(|&v| v as f64).collect();
        let (_, grad) = loss_and_gradient_raw(&m, &w, &batch).unwrap();
        let loss_at = |w: &[f64]| loss_and_gradient_raw(&m, w, &batch).unwrap().0;

        // every tensor gets a probe first, then random weights; components far
        // below the gradient scale carry only rounding noise and are not counted
        let tensors = m.tensors();
        let floor = 1e-8 * grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        let mut probes = tensors.iter().map(|t| t.offset + rng.gen_range(0..t.len())).collect::<Vec<_>>().into_iter();
        // the loss is piecewise quadratic in each weight, so a wide step is exact
        // away from ReLU kinks and keeps cancellation error low
        let h = 1e-3;
        let mut checked = 0;
        let mut attempts = 0;
        while checked < 50 {
            attempts += 1;
            assert!(attempts < 5000, "only {checked} weights with a usable gradient");
            let i = probes.next().unwrap_or_else(|| rng.gen_range(0..w.len()));
            let mut wp = w.clone();
            wp[i] += h;
            let mut wm = w.clone();
            wm[i] -= h;
            let fd = (loss_at(&wp) - loss_at(&wm)) / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs());
            if scale < floor {
                continue;
            }
            let name = &tensors.iter().find(|t| t.range().contains(&i)).unwrap().name;
            let rel = (fd - grad[i]).abs() / scale;
            assert!(rel <= 1e-4, "{name}[{i}]: analytic {} vs numeric {fd} (rel {rel})", grad[i]);
            checked += 1;
        }
    }
}
