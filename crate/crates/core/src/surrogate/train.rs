use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{loss_and_gradient_raw, SurrogateModel};
use crate::cochlea::{param_grid, sample_random_params, tessellate, ShapeParams, TessellationSpec};
use crate::engines::{clamped_mesh_sdm, BackendId, CLAMP_HI, CLAMP_LO};
use crate::error::{Error, Result};
use crate::geometry::GridSpec;

/// Optimizer and data settings for [`train`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Learning rate at the last step as a fraction of `learning_rate`, reached
    /// by cosine decay. 1.0 keeps the rate constant.
    pub final_lr_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Fraction of each batch drawn from the static set.
    pub static_ratio: f64,
    pub seed: u64,
    pub backend: BackendId,
    pub clamp: (f32, f32),
    pub tessellation: TessellationSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            steps: 2000,
            learning_rate: 1e-3,
            final_lr_fraction: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            static_ratio: 0.5,
            seed: 0,
            backend: BackendId::Bvh,
            clamp: (CLAMP_LO, CLAMP_HI),
            tessellation: TessellationSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be finite and non-negative", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return bad("final learning-rate fraction must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.static_ratio) {
            return bad(format!("static ratio {} outside [0, 1]", self.static_ratio));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("moment constants must satisfy 0 <= beta < 1 and epsilon > 0".into());
        }
        if !(self.clamp.0 <= 0.0 && self.clamp.1 >= 0.0) {
            return bad("clamp bounds must contain zero".into());
        }
        if !self.backend.is_mesh_based() {
            return bad(format!("reference backend must be a mesh engine, got {}", self.backend));
        }
        self.tessellation.validate()
    }

    /// Static samples per batch.
    pub fn static_per_batch(&self) -> usize {
        (self.static_ratio * self.batch_size as f64).round() as usize
    }

    fn learning_rate_at(&self, step: usize) -> f64 {
        if self.steps <= 1 || self.final_lr_fraction == 1.0 {
            return self.learning_rate;
        }
        let progress = step as f64 / (self.steps - 1) as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.learning_rate * (self.final_lr_fraction + (1.0 - self.final_lr_fraction) * cos)
    }
}

/// Clamped reference SDMs on a fixed parameter lattice.
#[derive(Clone, Debug, Default)]
pub struct StaticSet {
    pub params: Vec<ShapeParams>,
    pub targets: Vec<Vec<f32>>,
}

impl StaticSet {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// Clamped reference SDM of the tessellated shape `p`.
pub fn reference_sdm(
    p: &ShapeParams,
    backend: BackendId,
    spec: &GridSpec,
    tessellation: &TessellationSpec,
    clamp: (f32, f32),
) -> Result<Vec<f32>> {
    let mesh = tessellate(p, tessellation)?;
    Ok(clamped_mesh_sdm(backend, &mesh, spec, clamp.0, clamp.1)?.into_values())
}

/// References for the `n⁴` lattice of [`param_grid`] (625 for `n = 5`).
pub fn build_static_set(n_per_axis: usize, cfg: &TrainConfig, spec: &GridSpec) -> Result<StaticSet> {
    cfg.validate()?;
    let params = param_grid(n_per_axis)?;
    let targets = params
        .iter()
        .map(|p| reference_sdm(p, cfg.backend, spec, &cfg.tessellation, cfg.clamp))
        .collect::<Result<Vec<_>>>()?;
    Ok(StaticSet { params, targets })
}

/// Loss per step and the resulting model.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: SurrogateModel,
    pub loss_trace: Vec<f64>,
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, w: &mut [f32], g: &[f32], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (cfg.epsilon * c2.sqrt()) as f32;
        for i in 0..w.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            w[i] -= step * self.m[i] / (self.v[i].sqrt() + eps);
        }
    }
}

/// Adam on the batch MSE. Each batch mixes `static_per_batch` lattice samples
/// with fresh random shapes whose references are computed on the fly.
pub fn train(model: &SurrogateModel, cfg: &TrainConfig, static_set: &StaticSet) -> Result<TrainOutcome> {
    train_with_progress(model, cfg, static_set, |_, _| {})
}

/// [`train`] with a callback receiving `(step, batch loss)`.
pub fn train_with_progress(
    model: &SurrogateModel,
    cfg: &TrainConfig,
    static_set: &StaticSet,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.steps == 0 {
        return Ok(TrainOutcome { model: model.clone(), loss_trace: Vec::new() });
    }
    let n_static = cfg.static_per_batch();
    if n_static > 0 && static_set.is_empty() {
        return Err(Error::InvalidConfig("static set is empty but the static ratio is positive".into()));
    }
    let spec = model.architecture().grid;
    if static_set.targets.iter().any(|t| t.len() != spec.len()) || static_set.targets.len() != static_set.len() {
        return Err(Error::ShapeMismatch("static set targets do not match the model grid".into()));
    }
    let mut out = model.clone();
    let mut loss_trace = Vec::with_capacity(cfg.steps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(out.weights().len());
    for step in 0..cfg.steps {
        let mut params = Vec::with_capacity(cfg.batch_size);
        let mut online = Vec::new();
        for b in 0..cfg.batch_size {
            if b < n_static {
                let i = rng.gen_range(0..static_set.len());
                params.push((static_set.params[i], Some(i)));
            } else {
                let p = sample_random_params(&mut rng);
                online.push(reference_sdm(&p, cfg.backend, &spec, &cfg.tessellation, cfg.clamp)?);
                params.push((p, None));
            }
        }
        let mut online_iter = online.iter();
        let batch: Vec<([f32; 4], &[f32])> = params
            .iter()
            .map(|(p, idx)| {
                let target = match idx {
                    Some(i) => static_set.targets[*i].as_slice(),
                    None => online_iter.next().expect("one target per online sample").as_slice(),
                };
                (p.normalized().map(|v| v as f32), target)
            })
            .collect();
        let (loss, grad) = loss_and_gradient_raw(&out, out.weights(), &batch)?;
        if !loss.is_finite() {
            return Err(Error::InvalidConfig(format!("training diverged at step {step}")));
        }
        loss_trace.push(loss);
        progress(step, loss);
        let lr = cfg.learning_rate_at(step);
        adam.step(out.weights_mut(), &grad, lr, cfg);
    }
    out.meta.seed = cfg.seed;
    out.meta.steps += cfg.steps;
    out.meta.final_loss = loss_trace.last().copied();
    Ok(TrainOutcome { model: out, loss_trace })
}
