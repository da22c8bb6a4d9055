//! Point-wise decoder: an MLP from (normalized parameters, position) to the
//! signed distance at that position, trained with a clamped L1 loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::model::TrainingMeta;
use super::{Real, TensorInfo};
use crate::cochlea::{sample_random_params, tessellate, ShapeParams, TessellationSpec, PARAM_RANGES};
use crate::engines::{build_bvh, fill_by_slices, BackendId, QueryScratch};
use crate::error::{Error, Result};
use crate::geometry::{GridSpec, ScalarGrid, Vec3};

/// Inputs: four normalized parameters and three normalized coordinates.
pub const POINTWISE_INPUTS: usize = 7;
/// Saturation of the clamped L1 loss, mm.
pub const CLAMP_DELTA: f64 = 0.2;

/// Fully connected point-wise SDM decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseModel {
    hidden: Vec<usize>,
    weights: Vec<f32>,
    /// Axis-aligned box mapped to `[-1, 1]³` before entering the network.
    pub box_lo: Vec3,
    pub box_hi: Vec3,
    pub delta: f64,
    pub meta: TrainingMeta,
}

/// Hidden widths of the default model: six layers of 128.
pub fn default_pointwise_hidden() -> Vec<usize> {
    vec![128; 6]
}

impl PointwiseModel {
    /// Default layout with seeded scaled-uniform weights, normalizing
    /// coordinates by the box of `grid`.
    pub fn new(seed: u64, grid: &GridSpec) -> Self {
        Self::with_hidden(&default_pointwise_hidden(), seed, grid).expect("default widths are valid")
    }

    pub fn with_hidden(hidden: &[usize], seed: u64, grid: &GridSpec) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidConfig("point-wise hidden widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = pointwise_tensors(hidden);
        let mut weights = vec![0.0f32; tensors.iter().map(TensorInfo::len).sum()];
        for t in &tensors {
            let s = 1.0 / (t.fan_in as f64).sqrt();
            for v in &mut weights[t.range()] {
                *v = rng.gen_range(-s..s) as f32;
            }
        }
        Ok(PointwiseModel {
            hidden: hidden.to_vec(),
            weights,
            box_lo: grid.origin,
            box_hi: grid.max_center(),
            delta: CLAMP_DELTA,
            meta: TrainingMeta { seed, ..Default::default() },
        })
    }

    pub fn from_parts(
        hidden: Vec<usize>,
        weights: Vec<f32>,
        box_lo: Vec3,
        box_hi: Vec3,
        delta: f64,
        meta: TrainingMeta,
    ) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidConfig("point-wise hidden widths must be positive".into()));
        }
        let expected: usize = pointwise_tensors(&hidden).iter().map(TensorInfo::len).sum();
        if weights.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for a point-wise model of {expected}",
                weights.len()
            )));
        }
        if !(box_hi.x > box_lo.x && box_hi.y > box_lo.y && box_hi.z > box_lo.z) {
            return Err(Error::InvalidConfig("empty normalization box".into()));
        }
        if !(delta > 0.0) || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig("invalid point-wise model values".into()));
        }
        Ok(PointwiseModel { hidden, weights, box_lo, box_hi, delta, meta })
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }

    pub fn tensors(&self) -> Vec<TensorInfo> {
        pointwise_tensors(&self.hidden)
    }

    pub fn param_ranges(&self) -> &[(f64, f64); 4] {
        &PARAM_RANGES
    }

    /// Network input for parameters `p` and position `x`.
    pub fn encode(&self, p: &ShapeParams, x: Vec3) -> Result<[f64; POINTWISE_INPUTS]> {
        p.validate()?;
        let u = p.normalized();
        let lo = self.box_lo;
        let hi = self.box_hi;
        let c = |v: f64, a: f64, b: f64| 2.0 * (v - a) / (b - a) - 1.0;
        Ok([u[0], u[1], u[2], u[3], c(x.x, lo.x, hi.x), c(x.y, lo.y, hi.y), c(x.z, lo.z, hi.z)])
    }

    fn widths(&self) -> Vec<usize> {
        layer_widths(&self.hidden)
    }
}

fn layer_widths(hidden: &[usize]) -> Vec<usize> {
    let mut w = vec![POINTWISE_INPUTS];
    w.extend_from_slice(hidden);
    w.push(1);
    w
}

fn pointwise_tensors(hidden: &[usize]) -> Vec<TensorInfo> {
    let widths = layer_widths(hidden);
    let mut out = Vec::new();
    let mut offset = 0;
    for (l, pair) in widths.windows(2).enumerate() {
        let (n_in, n_out) = (pair[0], pair[1]);
        for (name, shape) in [("weight", vec![n_out, n_in]), ("bias", vec![n_out])] {
            let t = TensorInfo { name: format!("layer{l}.{name}"), shape, offset, fan_in: n_in };
            offset += t.len();
            out.push(t);
        }
    }
    out
}

/// Layer outputs (post-activation) for one input.
fn trace_point<T: Real>(widths: &[usize], w: &[T], input: &[T]) -> Vec<Vec<T>> {
    let mut acts = vec![input.to_vec()];
    let mut off = 0;
    let last = widths.len() - 2;
    for (l, pair) in widths.windows(2).enumerate() {
        let (n_in, n_out) = (pair[0], pair[1]);
        let wm = &w[off..off + n_in * n_out];
        let b = &w[off + n_in * n_out..off + n_in * n_out + n_out];
        off += n_in * n_out + n_out;
        let x = acts.last().expect("input layer");
        let mut y: Vec<T> = (0..n_out)
            .map(|o| wm[o * n_in..(o + 1) * n_in].iter().zip(x).fold(b[o], |acc, (&wv, &xv)| acc + wv * xv))
            .collect();
        if l < last {
            y.iter_mut().for_each(|v| *v = v.max(T::zero()));
        }
        acts.push(y);
    }
    acts
}

/// Output and `d output / d w` for one input, in `T`.
pub fn pw_output_gradient_raw<T: Real>(pm: &PointwiseModel, w: &[T], input: &[T]) -> (T, Vec<T>) {
    let widths = pm.widths();
    let acts = trace_point(&widths, w, input);
    let mut grad = vec![T::zero(); w.len()];
    backward_point(&widths, w, &acts, T::one(), &mut grad);
    (acts.last().expect("output")[0], grad)
}

fn backward_point<T: Real>(widths: &[usize], w: &[T], acts: &[Vec<T>], g_out: T, grad: &mut [T]) {
    let mut offsets = Vec::new();
    let mut off = 0;
    for pair in widths.windows(2) {
        offsets.push(off);
        off += pair[0] * pair[1] + pair[1];
    }
    let mut g = vec![g_out];
    for l in (0..widths.len() - 1).rev() {
        let (n_in, n_out) = (widths[l], widths[l + 1]);
        let o = offsets[l];
        let x = &acts[l];
        for j in 0..n_out {
            let gj = g[j];
            if gj == T::zero() {
                continue;
            }
            let row = &mut grad[o + j * n_in..o + (j + 1) * n_in];
            for (r, &xv) in row.iter_mut().zip(x) {
                *r = *r + gj * xv;
            }
            grad[o + n_in * n_out + j] = grad[o + n_in * n_out + j] + gj;
        }
        if l == 0 {
            break;
        }
        let mut g_in = vec![T::zero(); n_in];
        for j in 0..n_out {
            let gj = g[j];
            if gj == T::zero() {
                continue;
            }
            for (gi, &wv) in g_in.iter_mut().zip(&w[o + j * n_in..o + (j + 1) * n_in]) {
                *gi = *gi + gj * wv;
            }
        }
        // ReLU of the previous layer
        for (gi, &a) in g_in.iter_mut().zip(&acts[l]) {
            if a <= T::zero() {
                *gi = T::zero();
            }
        }
        g = g_in;
    }
}

/// SDM estimate at `x` for shape `p`, mm.
pub fn pw_forward(pm: &PointwiseModel, p: &ShapeParams, x: Vec3) -> Result<f64> {
    let input = pm.encode(p, x)?.map(|v| v as f32);
    let acts = trace_point(&pm.widths(), &pm.weights, &input);
    Ok(acts.last().expect("output")[0] as f64)
}

/// Points evaluated together in [`pw_fill_grid`].
const FILL_BLOCK: usize = 16;

/// Evaluates `FILL_BLOCK` inputs at once. Each point sees the same operations
/// in the same order as [`pw_forward`], so results are bitwise identical.
fn forward_block(widths: &[usize], w: &[f32], inputs: &[[f32; POINTWISE_INPUTS]], out: &mut [f32]) {
    let n = inputs.len();
    // activations stored feature-major: x[k * FILL_BLOCK + point]
    let mut x = vec![0.0f32; POINTWISE_INPUTS * FILL_BLOCK];
    for (pt, inp) in inputs.iter().enumerate() {
        for k in 0..POINTWISE_INPUTS {
            x[k * FILL_BLOCK + pt] = inp[k];
        }
    }
    let mut off = 0;
    let last = widths.len() - 2;
    for (l, pair) in widths.windows(2).enumerate() {
        let (n_in, n_out) = (pair[0], pair[1]);
        let wm = &w[off..off + n_in * n_out];
        let b = &w[off + n_in * n_out..off + n_in * n_out + n_out];
        off += n_in * n_out + n_out;
        let mut y = vec![0.0f32; n_out * FILL_BLOCK];
        for o in 0..n_out {
            let mut acc = [b[o]; FILL_BLOCK];
            for k in 0..n_in {
                let wv = wm[o * n_in + k];
                let xk = &x[k * FILL_BLOCK..(k + 1) * FILL_BLOCK];
                for pt in 0..FILL_BLOCK {
                    acc[pt] = acc[pt] + wv * xk[pt];
                }
            }
            if l < last {
                acc.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            y[o * FILL_BLOCK..(o + 1) * FILL_BLOCK].copy_from_slice(&acc);
        }
        x = y;
    }
    out[..n].copy_from_slice(&x[..n]);
}

/// Evaluates the model at every voxel centre of `g`, in engine order.
pub fn pw_fill_grid(pm: &PointwiseModel, p: &ShapeParams, g: &GridSpec) -> Result<ScalarGrid> {
    p.validate()?;
    let widths = pm.widths();
    let values = fill_by_slices(g, |k, out| {
        let [nx, ny, _] = g.dims;
        let mut block = Vec::with_capacity(FILL_BLOCK);
        let mut start = 0;
        for idx in 0..nx * ny {
            let (i, j) = (idx % nx, idx / nx);
            let input = pm.encode(p, g.voxel_center(i, j, k)).expect("validated params");
            block.push(input.map(|v| v as f32));
            if block.len() == FILL_BLOCK || idx + 1 == nx * ny {
                forward_block(&widths, &pm.weights, &block, &mut out[start..start + block.len()]);
                start += block.len();
                block.clear();
            }
        }
    });
    ScalarGrid::new(*g, values)
}

/// `|clamp(ŷ, ±δ) − clamp(y, ±δ)|`.
pub fn clamped_l1(pred: f64, target: f64, delta: f64) -> f64 {
    (pred.clamp(-delta, delta) - target.clamp(-delta, delta)).abs()
}

/// Sampling and optimizer settings for [`pw_train`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PwTrainConfig {
    pub steps: usize,
    pub shapes_per_step: usize,
    pub points_per_shape: usize,
    /// Share of points placed near the surface; the rest are uniform in the box.
    pub near_fraction: f64,
    /// Standard deviation of the normal offset of near-surface points, mm.
    pub near_sigma: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub backend: BackendId,
    pub tessellation: TessellationSpec,
}

impl Default for PwTrainConfig {
    fn default() -> Self {
        PwTrainConfig {
            steps: 2000,
            shapes_per_step: 4,
            points_per_shape: 128,
            near_fraction: 0.8,
            near_sigma: 0.2,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            backend: BackendId::Bvh,
            tessellation: TessellationSpec::default(),
        }
    }
}

impl PwTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.shapes_per_step == 0 || self.points_per_shape == 0 {
            return bad("point-wise batches must be non-empty");
        }
        if !(0.0..=1.0).contains(&self.near_fraction) || !(self.near_sigma >= 0.0) {
            return bad("near-surface sampling settings out of range");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("moment constants must satisfy 0 <= beta < 1 and epsilon > 0");
        }
        if !matches!(self.backend, BackendId::Naive | BackendId::Bvh) {
            return bad("point-wise targets need an exact point query (naive or bvh)");
        }
        self.tessellation.validate()
    }
}

/// `(params, position, signed distance)` triples for one random shape.
pub fn sample_training_points<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &PwTrainConfig,
    box_lo: Vec3,
    box_hi: Vec3,
) -> Result<Vec<(ShapeParams, Vec3, f64)>> {
    let p = sample_random_params(rng);
    let mesh = tessellate(&p, &cfg.tessellation)?;
    let n_near = (cfg.near_fraction * cfg.points_per_shape as f64).round() as usize;
    let normal = Normal::new(0.0, cfg.near_sigma.max(1e-12)).expect("finite sigma");
    let mut pts: Vec<Vec3> = mesh
        .sample_surface(n_near, rng)
        .into_iter()
        .map(|(x, f)| x + mesh.triangle(f).normal() * normal.sample(rng))
        .collect();
    while pts.len() < cfg.points_per_shape {
        pts.push(Vec3::new(
            rng.gen_range(box_lo.x..box_hi.x),
            rng.gen_range(box_lo.y..box_hi.y),
            rng.gen_range(box_lo.z..box_hi.z),
        ));
    }
    let mut out = Vec::with_capacity(pts.len());
    match cfg.backend {
        BackendId::Bvh => {
            let bvh = build_bvh(&mesh)?;
            let mut scratch = QueryScratch::default();
            for x in pts {
                out.push((p, x, bvh.signed_distance(&mesh, x, &mut scratch)?));
            }
        }
        _ => {
            for x in pts {
                out.push((p, x, mesh.signed_distance_brute_force(x)?));
            }
        }
    }
    Ok(out)
}

/// Mean clamped-L1 loss over `samples` and its gradient.
pub fn pw_loss_and_gradient(pm: &PointwiseModel, samples: &[(ShapeParams, Vec3, f64)]) -> Result<(f64, Vec<f32>)> {
    if samples.is_empty() {
        return Err(Error::ShapeMismatch("empty point batch".into()));
    }
    let widths = pm.widths();
    let n = samples.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0f32; pm.weights.len()];
    for (p, x, y) in samples {
        let input = pm.encode(p, *x)?.map(|v| v as f32);
        let acts = trace_point(&widths, &pm.weights, &input);
        let pred = acts.last().expect("output")[0] as f64;
        loss += clamped_l1(pred, *y, pm.delta);
        let diff = pred.clamp(-pm.delta, pm.delta) - y.clamp(-pm.delta, pm.delta);
        if pred.abs() < pm.delta && diff != 0.0 {
            let g = (diff.signum() / n) as f32;
            backward_point(&widths, &pm.weights, &acts, g, &mut grad);
        }
    }
    Ok((loss / n, grad))
}

/// Adam on the clamped L1 loss over freshly sampled shapes and points.
pub fn pw_train(pm: &PointwiseModel, cfg: &PwTrainConfig) -> Result<(PointwiseModel, Vec<f64>)> {
    pw_train_with_progress(pm, cfg, |_, _| {})
}

/// [`pw_train`] with a callback receiving `(step, batch loss)`.
pub fn pw_train_with_progress(
    pm: &PointwiseModel,
    cfg: &PwTrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<(PointwiseModel, Vec<f64>)> {
    cfg.validate()?;
    let mut out = pm.clone();
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = out.weights.len();
    let (mut m, mut v) = (vec![0.0f32; n], vec![0.0f32; n]);
    for step in 0..cfg.steps {
        let mut samples = Vec::with_capacity(cfg.shapes_per_step * cfg.points_per_shape);
        for _ in 0..cfg.shapes_per_step {
            samples.extend(sample_training_points(&mut rng, cfg, out.box_lo, out.box_hi)?);
        }
        let (loss, grad) = pw_loss_and_gradient(&out, &samples)?;
        trace.push(loss);
        progress(step, loss);
        let t = (step + 1) as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let lr = (cfg.learning_rate * c2.sqrt() / c1) as f32;
        let eps = (cfg.epsilon * c2.sqrt()) as f32;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        for i in 0..n {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            out.weights[i] -= lr * m[i] / (v[i].sqrt() + eps);
        }
    }
    if cfg.steps > 0 {
        out.meta.seed = cfg.seed;
        out.meta.steps += cfg.steps;
        out.meta.final_loss = trace.last().copied();
    }
    Ok((out, trace))
}
