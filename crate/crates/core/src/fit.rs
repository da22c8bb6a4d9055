//! Recovering shape parameters from a target SDM by derivative-free search.
//!
//! The search runs Nelder–Mead in normalized parameter space `[-1, 1]^4`,
//! folding points that leave the box back inside. Any SDM backend can drive
//! it: the exact mesh engines, the grid decoder or the point-wise network.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cochlea::{tessellate, ShapeParams, TessellationSpec, PARAM_NAMES, PARAM_RANGES};
use crate::engines::{clamp_grid, clamped_mesh_sdm, sdm_from_binary, BackendId, CLAMP_HI, CLAMP_LO};
use crate::error::{Error, Result};
use crate::geometry::{BinaryGrid, GridSpec, ScalarGrid};
use crate::surrogate::{forward, pw_fill_grid, PointwiseModel, SurrogateModel};

/// Default sigmoid length scale, mm.
pub const DEFAULT_L_REF: f64 = 0.2;
/// Probabilities are kept inside `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;

/// Table headers and ranges in the layout of the published comparison.
pub const RANGE_LABELS: [&str; 4] = ["(2.0, 5.0)", "(0.0, 1.2)", "(0.05, 0.25)", "(-pi/4, pi/4)"];

/// A clamped SDM to fit, with its occupancy when one is known.
#[derive(Debug, Clone)]
pub struct FitTarget {
    pub grid: ScalarGrid,
    pub binary: Option<BinaryGrid>,
    pub l_ref: f64,
}

impl FitTarget {
    /// Wraps an SDM, clamping it to the reference band.
    pub fn from_sdm(grid: &ScalarGrid) -> Self {
        FitTarget {
            grid: clamp_grid(grid, CLAMP_LO, CLAMP_HI),
            binary: None,
            l_ref: DEFAULT_L_REF,
        }
    }

    /// Converts an occupancy volume with the distance-transform conventions.
    pub fn from_binary(binary: &BinaryGrid) -> Result<Self> {
        let sdm = sdm_from_binary(binary)?;
        if sdm.undersampled {
            return Err(Error::InvalidConfig("binary target has no occupied voxels".into()));
        }
        Ok(FitTarget {
            grid: clamp_grid(&sdm.grid, CLAMP_LO, CLAMP_HI),
            binary: Some(binary.clone()),
            l_ref: DEFAULT_L_REF,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        self.grid.spec()
    }

    /// Occupancy used by the log-odds objective; derived from the SDM sign
    /// when the target was not built from a volume.
    pub fn occupancy(&self) -> BinaryGrid {
        match &self.binary {
            Some(b) => b.clone(),
            None => BinaryGrid::new(
                *self.grid.spec(),
                self.grid.values().iter().map(|&v| v < 0.0).collect(),
            )
            .expect("sizes match"),
        }
    }
}

/// Where model SDMs come from during a fit.
#[derive(Debug, Clone, Copy)]
pub enum FitBackend<'a> {
    Mesh {
        engine: BackendId,
        tessellation: TessellationSpec,
    },
    Surrogate(&'a SurrogateModel),
    Pointwise(&'a PointwiseModel),
}

impl<'a> FitBackend<'a> {
    pub fn mesh(engine: BackendId) -> Self {
        FitBackend::Mesh {
            engine,
            tessellation: TessellationSpec::default(),
        }
    }

    pub fn id(&self) -> BackendId {
        match self {
            FitBackend::Mesh { engine, .. } => *engine,
            FitBackend::Surrogate(_) => BackendId::Surrogate,
            FitBackend::Pointwise(_) => BackendId::Pointwise,
        }
    }

    /// The backend's SDM at `p` on `spec`, clamped to the reference band.
    pub fn clamped_sdm(&self, p: &ShapeParams, spec: &GridSpec) -> Result<ScalarGrid> {
        let grid = match self {
            FitBackend::Mesh { engine, tessellation } => {
                if !engine.is_mesh_based() {
                    return Err(Error::BackendUnavailable(
                        engine.to_string(),
                        "not a mesh engine".into(),
                    ));
                }
                let mesh = tessellate(p, tessellation)?;
                return clamped_mesh_sdm(*engine, &mesh, spec, CLAMP_LO, CLAMP_HI);
            }
            FitBackend::Surrogate(model) => {
                if model.architecture().grid != *spec {
                    return Err(Error::ShapeMismatch(format!(
                        "surrogate predicts {:?}, target grid is {:?}",
                        model.architecture().grid.dims,
                        spec.dims
                    )));
                }
                forward(model, p)?
            }
            FitBackend::Pointwise(model) => pw_fill_grid(model, p, spec)?,
        };
        Ok(clamp_grid(&grid, CLAMP_LO, CLAMP_HI))
    }
}

/// Mean squared voxel difference between the backend's SDM at `p` and the target.
pub fn objective_mse(p: &ShapeParams, target: &FitTarget, backend: &FitBackend) -> Result<f64> {
    backend.clamped_sdm(p, target.spec())?.mse(&target.grid)
}

/// Membership probability of a voxel with signed distance `sdm`.
///
/// Inside is negative, so the sigmoid argument is `-sdm / l_ref`.
pub fn membership_probability(sdm: f64, l_ref: f64) -> f64 {
    1.0 / (1.0 + (sdm / l_ref).exp())
}

/// Mean negative Bernoulli log-likelihood of the target occupancy under the
/// backend's SDM at `p`.
pub fn objective_logodds(
    p: &ShapeParams,
    target: &BinaryGrid,
    backend: &FitBackend,
    l_ref: f64,
) -> Result<f64> {
    if !(l_ref > 0.0) {
        return Err(Error::InvalidConfig(format!("l_ref must be positive, got {l_ref}")));
    }
    let s = backend.clamped_sdm(p, target.spec())?;
    logodds_loss(&s, target, l_ref)
}

fn logodds_loss(s: &ScalarGrid, target: &BinaryGrid, l_ref: f64) -> Result<f64> {
    if s.spec() != target.spec() {
        return Err(Error::ShapeMismatch("model and target grids differ".into()));
    }
    let total: f64 = s
        .values()
        .iter()
        .zip(target.values())
        .map(|(&v, &inside)| {
            let q = membership_probability(v as f64, l_ref).clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(if inside { q } else { 1.0 - q }).ln()
        })
        .sum();
    Ok(total / s.values().len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Mse,
    Logodds,
}

/// Search settings. Tolerances are in normalized units, where each range
/// spans 2.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub restarts: usize,
    /// Iteration cap per restart.
    pub max_iterations: usize,
    /// Objective evaluation cap per restart.
    pub max_evaluations: usize,
    /// Stop once every vertex is this close to the best one...
    pub x_tolerance: f64,
    /// ...and the objective spread across the simplex is below this.
    pub f_tolerance: f64,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
    pub seed: u64,
    pub objective: Objective,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            restarts: 4,
            max_iterations: 400,
            max_evaluations: 800,
            x_tolerance: 1e-3,
            f_tolerance: 1e-9,
            initial_step: 0.25,
            seed: 0,
            objective: Objective::Mse,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if self.max_iterations == 0 || self.max_evaluations < 5 {
            return bad("iteration and evaluation caps are too small");
        }
        if !(self.x_tolerance >= 0.0 && self.f_tolerance >= 0.0) {
            return bad("tolerances must be non-negative");
        }
        if !(self.initial_step > 0.0 && self.initial_step <= 1.0) {
            return bad("initial_step must lie in (0, 1]");
        }
        Ok(())
    }
}

/// One Nelder–Mead run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub start: ShapeParams,
    pub start_objective: f64,
    pub params: ShapeParams,
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ShapeParams,
    pub objective: f64,
    /// Iterations summed over restarts.
    pub iterations: usize,
    pub evaluations: usize,
    /// Best objective so far after each iteration, across restarts.
    pub trace: Vec<f64>,
    pub restarts: Vec<RestartSummary>,
    pub seconds: f64,
    pub backend: BackendId,
}

/// Maps `u` into `[-1, 1]` by mirroring at the bounds.
pub fn fold_unit(u: f64) -> f64 {
    if (-1.0..=1.0).contains(&u) {
        return u;
    }
    let t = (u + 1.0).rem_euclid(4.0);
    (if t > 2.0 { 4.0 - t } else { t }) - 1.0
}

fn fold(u: [f64; 4]) -> [f64; 4] {
    u.map(fold_unit)
}

struct Search<'f> {
    f: &'f mut dyn FnMut(&[f64; 4]) -> Result<f64>,
    evaluations: usize,
}

impl Search<'_> {
    fn eval(&mut self, u: [f64; 4]) -> Result<([f64; 4], f64)> {
        let u = fold(u);
        self.evaluations += 1;
        let v = (self.f)(&u)?;
        Ok((u, if v.is_nan() { f64::INFINITY } else { v }))
    }
}

fn combine(a: &[f64; 4], b: &[f64; 4], t: f64) -> [f64; 4] {
    std::array::from_fn(|i| a[i] + t * (b[i] - a[i]))
}

struct Run {
    best: [f64; 4],
    value: f64,
    start_value: f64,
    iterations: usize,
    evaluations: usize,
    trace: Vec<f64>,
}

fn nelder_mead(f: &mut dyn FnMut(&[f64; 4]) -> Result<f64>, start: [f64; 4], cfg: &FitConfig) -> Result<Run> {
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;
    let mut search = Search { f, evaluations: 0 };
    let mut simplex = Vec::with_capacity(5);
    simplex.push(search.eval(start)?);
    let start_value = simplex[0].1;
    for d in 0..4 {
        let mut u = fold(start);
        // Step inward so the initial simplex never folds onto itself.
        u[d] += if u[d] + cfg.initial_step <= 1.0 { cfg.initial_step } else { -cfg.initial_step };
        simplex.push(search.eval(u)?);
    }
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best_u, best_f) = simplex[0];
        let x_spread = simplex
            .iter()
            .flat_map(|(u, _)| (0..4).map(move |i| (u[i] - best_u[i]).abs()))
            .fold(0.0, f64::max);
        let f_spread = simplex[4].1 - best_f;
        if (x_spread <= cfg.x_tolerance && f_spread <= cfg.f_tolerance)
            || iterations >= cfg.max_iterations
            || search.evaluations + 2 > cfg.max_evaluations
        {
            return Ok(Run {
                best: best_u,
                value: best_f,
                start_value,
                iterations,
                evaluations: search.evaluations,
                trace,
            });
        }
        iterations += 1;
        let centroid: [f64; 4] =
            std::array::from_fn(|i| simplex[..4].iter().map(|(u, _)| u[i]).sum::<f64>() / 4.0);
        let worst = simplex[4];
        let second = simplex[3].1;
        let reflected = search.eval(combine(&centroid, &worst.0, -REFLECT))?;
        if reflected.1 < best_f {
            let expanded = search.eval(combine(&centroid, &worst.0, -EXPAND))?;
            simplex[4] = if expanded.1 < reflected.1 { expanded } else { reflected };
        } else if reflected.1 < second {
            simplex[4] = reflected;
        } else {
            let contracted = if reflected.1 < worst.1 {
                search.eval(combine(&centroid, &reflected.0, CONTRACT))?
            } else {
                search.eval(combine(&centroid, &worst.0, CONTRACT))?
            };
            if contracted.1 < worst.1.min(reflected.1) {
                simplex[4] = contracted;
            } else {
                for v in simplex.iter_mut().skip(1) {
                    *v = search.eval(combine(&best_u, &v.0, SHRINK))?;
                }
            }
        }
        let current = simplex.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
        trace.push(current.min(best_f));
    }
}

/// Starting point of each restart: the centre of the box first, then seeded
/// uniform draws.
pub fn restart_starts(restarts: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..restarts)
        .map(|r| {
            if r == 0 {
                [0.0; 4]
            } else {
                std::array::from_fn(|_| rng.gen_range(-1.0..=1.0))
            }
        })
        .collect()
}

/// Outcome of [`minimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub params: ShapeParams,
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub trace: Vec<f64>,
    pub restarts: Vec<RestartSummary>,
}

/// Minimizes an arbitrary objective of the shape parameters.
pub fn minimize(objective: &mut dyn FnMut(&ShapeParams) -> Result<f64>, cfg: &FitConfig) -> Result<Minimum> {
    cfg.validate()?;
    let mut f = |u: &[f64; 4]| objective(&ShapeParams::from_normalized(*u));
    let mut best: Option<([f64; 4], f64)> = None;
    let mut out = Minimum {
        params: ShapeParams::default(),
        objective: f64::INFINITY,
        iterations: 0,
        evaluations: 0,
        trace: Vec::new(),
        restarts: Vec::with_capacity(cfg.restarts),
    };
    for start in restart_starts(cfg.restarts, cfg.seed) {
        let run = nelder_mead(&mut f, start, cfg)?;
        out.evaluations += run.evaluations;
        out.iterations += run.iterations;
        let floor = best.map_or(f64::INFINITY, |b| b.1);
        out.trace.extend(run.trace.iter().map(|&t| t.min(floor)));
        if best.map_or(true, |b| run.value < b.1) {
            best = Some((run.best, run.value));
        }
        out.restarts.push(RestartSummary {
            start: ShapeParams::from_normalized(fold(start)),
            start_objective: run.start_value,
            params: ShapeParams::from_normalized(run.best),
            objective: run.value,
            iterations: run.iterations,
            evaluations: run.evaluations,
        });
    }
    let (u, v) = best.expect("at least one restart");
    out.params = ShapeParams::from_normalized(u);
    out.objective = v;
    Ok(out)
}

/// Fits the shape parameters to `target` with `backend`.
pub fn fit_shape(target: &FitTarget, backend: &FitBackend, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let started = Instant::now();
    let spec = *target.spec();
    let occupancy = match cfg.objective {
        Objective::Logodds => Some(target.occupancy()),
        Objective::Mse => None,
    };
    let mut objective = |p: &ShapeParams| -> Result<f64> {
        let s = backend.clamped_sdm(p, &spec)?;
        match &occupancy {
            Some(b) => logodds_loss(&s, b, target.l_ref),
            None => s.mse(&target.grid),
        }
    };
    let m = minimize(&mut objective, cfg)?;
    Ok(FitResult {
        params: m.params,
        objective: m.objective,
        iterations: m.iterations,
        evaluations: m.evaluations,
        trace: m.trace,
        restarts: m.restarts,
        seconds: started.elapsed().as_secs_f64(),
        backend: backend.id(),
    })
}

/// Seeded ground-truth parameters drawn from the central `fraction` of each
/// range.
pub fn synthetic_params(n: usize, seed: u64, fraction: f64) -> Vec<ShapeParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = fraction.clamp(0.0, 1.0);
    (0..n)
        .map(|_| ShapeParams::from_normalized(std::array::from_fn(|_| f * rng.gen_range(-1.0..=1.0))))
        .collect()
}

/// Target SDM generated by `backend` at `truth`, with optional Gaussian voxel
/// noise of standard deviation `noise_sigma` mm.
pub fn synthetic_target(
    truth: &ShapeParams,
    backend: &FitBackend,
    spec: &GridSpec,
    noise_sigma: f64,
    seed: u64,
) -> Result<FitTarget> {
    let mut target = FitTarget::from_sdm(&backend.clamped_sdm(truth, spec)?);
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma)
            .map_err(|e| Error::InvalidConfig(format!("noise sigma: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = target
            .grid
            .values()
            .iter()
            .map(|&v| (v as f64 + normal.sample(&mut rng)) as f32)
            .collect();
        target.grid = ScalarGrid::new(*spec, values)?;
    } else if noise_sigma < 0.0 || noise_sigma.is_nan() {
        return Err(Error::InvalidConfig("noise sigma must be non-negative".into()));
    }
    Ok(target)
}

/// Both fits of one target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseComparison {
    pub truth: Option<ShapeParams>,
    pub reference: FitResult,
    pub candidate: FitResult,
    /// `|reference - candidate|` per parameter.
    pub abs_diff: [f64; 4],
    /// Euclidean norm of `abs_diff`.
    pub p_err: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitComparison {
    pub cases: Vec<CaseComparison>,
    pub mean_abs_diff: [f64; 4],
    pub mean_p_err: f64,
}

impl FitComparison {
    /// `mean_abs_diff` divided by each range width.
    pub fn relative_mean_diff(&self) -> [f64; 4] {
        std::array::from_fn(|i| self.mean_abs_diff[i] / (PARAM_RANGES[i].1 - PARAM_RANGES[i].0))
    }

    /// Parameter names, ranges and mean errors, one row each.
    pub fn write_table_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "Parameters Name,{}", PARAM_NAMES.join(","))?;
        let ranges: Vec<String> = RANGE_LABELS.iter().map(|r| format!("\"{r}\"")).collect();
        writeln!(w, "Parameters Range,{}", ranges.join(","))?;
        let errs: Vec<String> = self.mean_abs_diff.iter().map(|e| format!("{e:.2e}")).collect();
        writeln!(w, "Mean shape parameters errors,{}", errs.join(","))?;
        Ok(())
    }

    /// One row per case with both fits and their difference.
    pub fn write_cases_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let names = |prefix: &str| {
            PARAM_NAMES
                .iter()
                .map(|n| format!("{prefix}_{n}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        writeln!(
            w,
            "case,{},{},{},p_err,reference_seconds,candidate_seconds",
            names("reference"),
            names("candidate"),
            names("diff")
        )?;
        for (i, c) in self.cases.iter().enumerate() {
            let join = |v: [f64; 4]| v.map(|x| x.to_string()).join(",");
            writeln!(
                w,
                "{i},{},{},{},{},{},{}",
                join(c.reference.params.to_array()),
                join(c.candidate.params.to_array()),
                join(c.abs_diff),
                c.p_err,
                c.reference.seconds,
                c.candidate.seconds
            )?;
        }
        Ok(())
    }
}

/// Fits every target with both backends under the same settings and seed.
pub fn compare_fits(
    targets: &[(Option<ShapeParams>, FitTarget)],
    reference: &FitBackend,
    candidate: &FitBackend,
    cfg: &FitConfig,
) -> Result<FitComparison> {
    if targets.is_empty() {
        return Err(Error::InvalidConfig("no targets to compare".into()));
    }
    let mut cases = Vec::with_capacity(targets.len());
    for (truth, target) in targets {
        let r = fit_shape(target, reference, cfg)?;
        let c = fit_shape(target, candidate, cfg)?;
        let (a, b) = (r.params.to_array(), c.params.to_array());
        let abs_diff: [f64; 4] = std::array::from_fn(|i| (a[i] - b[i]).abs());
        let p_err = abs_diff.iter().map(|d| d * d).sum::<f64>().sqrt();
        cases.push(CaseComparison {
            truth: *truth,
            reference: r,
            candidate: c,
            abs_diff,
            p_err,
        });
    }
    let n = cases.len() as f64;
    let mean_abs_diff = std::array::from_fn(|i| cases.iter().map(|c| c.abs_diff[i]).sum::<f64>() / n);
    let mean_p_err = cases.iter().map(|c| c.p_err).sum::<f64>() / n;
    Ok(FitComparison {
        cases,
        mean_abs_diff,
        mean_p_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cochlea::default_grid_spec;
    use crate::geometry::Vec3;
    use crate::surrogate::{init_model_with, Architecture};
    use proptest::prelude::*;

    fn quadratic(p: &ShapeParams, centre: [f64; 4]) -> f64 {
        let u = p.normalized();
        (0..4).map(|i| (u[i] - centre[i]).powi(2) * (i + 1) as f64).sum()
    }

    fn small_spec() -> GridSpec {
        GridSpec::new(Vec3::new(-5.0, -5.0, -2.0), 0.8, [13, 13, 15]).unwrap()
    }

    #[test]
    fn sigmoid_probabilities() {
        assert_eq!(membership_probability(0.0, 0.2), 0.5);
        assert!((membership_probability(-0.2, 0.2) - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!(membership_probability(-50.0, 0.2) > 1.0 - 1e-12);
        assert!(membership_probability(50.0, 0.2) < 1e-12);
    }

    #[test]
    fn fold_mirrors_into_the_box() {
        assert_eq!(fold_unit(0.3), 0.3);
        assert!((fold_unit(1.25) - 0.75).abs() < 1e-15);
        assert!((fold_unit(-1.5) + 0.5).abs() < 1e-15);
        assert!((fold_unit(3.5) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn nelder_mead_finds_a_quadratic_minimum() {
        let centre = [0.3, -0.4, 0.1, 0.7];
        let cfg = FitConfig {
            x_tolerance: 1e-6,
            f_tolerance: 1e-14,
            ..FitConfig::default()
        };
        let m = minimize(&mut |p| Ok(quadratic(p, centre)), &cfg).unwrap();
        let u = m.params.normalized();
        for i in 0..4 {
            assert!((u[i] - centre[i]).abs() < 1e-4);
        }
        assert!(m.objective < 1e-8);
        assert!(m.trace.windows(2).all(|w| w[1] <= w[0]));
        for r in &m.restarts {
            assert!(r.objective <= r.start_objective);
            assert!(m.objective <= r.start_objective);
        }
    }

    #[test]
    fn minimum_on_the_boundary_is_reached() {
        let centre = [1.0, -1.0, 0.0, 0.5];
        let p = minimize(&mut |p| Ok(quadratic(p, centre)), &FitConfig::default())
            .unwrap()
            .params;
        let u = p.normalized();
        assert!((u[0] - 1.0).abs() < 5e-3 && (u[1] + 1.0).abs() < 5e-3);
        p.validate().unwrap();
    }

    #[test]
    fn objective_is_zero_at_the_generating_params() {
        let backend = FitBackend::mesh(BackendId::Bvh);
        let truth = ShapeParams::default();
        let target = synthetic_target(&truth, &backend, &small_spec(), 0.0, 0).unwrap();
        assert_eq!(objective_mse(&truth, &target, &backend).unwrap(), 0.0);
        let bumped = ShapeParams { a: truth.a + 0.5, ..truth };
        assert!(objective_mse(&bumped, &target, &backend).unwrap() > 0.0);
        let ll = objective_logodds(&truth, &target.occupancy(), &backend, DEFAULT_L_REF).unwrap();
        let ll_bumped = objective_logodds(&bumped, &target.occupancy(), &backend, DEFAULT_L_REF).unwrap();
        assert!(ll.is_finite() && ll < ll_bumped);
    }

    #[test]
    fn binary_targets_use_distance_transform_conventions() {
        let spec = GridSpec::new(Vec3::ZERO, 0.2, [8, 8, 8]).unwrap();
        let occupied = (0..spec.len())
            .map(|i| spec.coords(i).iter().all(|&c| (2..6).contains(&c)))
            .collect();
        let b = BinaryGrid::new(spec, occupied).unwrap();
        let t = FitTarget::from_binary(&b).unwrap();
        assert_eq!(t.grid.get(3, 3, 3), -0.2);
        assert_eq!(t.grid.get(1, 3, 3), 0.0);
        assert_eq!(t.grid.get(0, 3, 3), 0.2);
        assert_eq!(t.occupancy(), b);
        let empty = BinaryGrid::new(spec, vec![false; spec.len()]).unwrap();
        assert!(FitTarget::from_binary(&empty).is_err());
    }

    #[test]
    fn surrogate_grid_must_match_the_target() {
        let model = init_model_with(Architecture::reduced(), 1).unwrap();
        let backend = FitBackend::Surrogate(&model);
        assert!(backend.clamped_sdm(&ShapeParams::default(), &default_grid_spec()).is_err());
        let spec = model.architecture().grid;
        let s = backend.clamped_sdm(&ShapeParams::default(), &spec).unwrap();
        let (lo, hi) = s.min_max();
        assert!(lo >= CLAMP_LO && hi <= CLAMP_HI);
    }

    #[test]
    fn non_mesh_engine_is_rejected() {
        let backend = FitBackend::Mesh {
            engine: BackendId::Surrogate,
            tessellation: TessellationSpec::default(),
        };
        assert!(backend.clamped_sdm(&ShapeParams::default(), &small_spec()).is_err());
    }

    #[test]
    fn fit_recovers_params_on_a_coarse_grid() {
        let backend = FitBackend::mesh(BackendId::Bvh);
        let truth = ShapeParams::new(3.2, 0.5, 0.12, 0.2).unwrap();
        let target = synthetic_target(&truth, &backend, &small_spec(), 0.0, 0).unwrap();
        let cfg = FitConfig {
            restarts: 1,
            ..FitConfig::default()
        };
        let r = fit_shape(&target, &backend, &cfg).unwrap();
        let (got, want) = (r.params.to_array(), truth.to_array());
        for i in 0..4 {
            let width = PARAM_RANGES[i].1 - PARAM_RANGES[i].0;
            assert!((got[i] - want[i]).abs() <= 0.02 * width, "{i}: {} vs {}", got[i], want[i]);
        }
        assert!(r.objective <= r.restarts[0].start_objective);
        assert_eq!(r.backend, BackendId::Bvh);
        let again = fit_shape(&target, &backend, &cfg).unwrap();
        assert_eq!(again.params, r.params);
        assert_eq!(again.trace, r.trace);
    }

    #[test]
    fn identical_backends_compare_to_zero() {
        let backend = FitBackend::mesh(BackendId::Bvh);
        let spec = GridSpec::new(Vec3::new(-5.0, -5.0, -2.0), 1.2, [9, 9, 10]).unwrap();
        let truth = synthetic_params(2, 3, 0.8);
        let targets: Vec<_> = truth
            .iter()
            .map(|p| (Some(*p), synthetic_target(p, &backend, &spec, 0.0, 0).unwrap()))
            .collect();
        let cfg = FitConfig {
            restarts: 1,
            max_evaluations: 60,
            ..FitConfig::default()
        };
        let cmp = compare_fits(&targets, &backend, &backend, &cfg).unwrap();
        assert_eq!(cmp.mean_p_err, 0.0);
        let mut buf = Vec::new();
        cmp.write_table_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains(
            "Parameters Range,\"(2.0, 5.0)\",\"(0.0, 1.2)\",\"(0.05, 0.25)\",\"(-pi/4, pi/4)\""
        ));
        let mut buf = Vec::new();
        cmp.write_cases_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn noise_is_seeded() {
        let backend = FitBackend::mesh(BackendId::Bvh);
        let spec = GridSpec::new(Vec3::new(-5.0, -5.0, -2.0), 1.2, [9, 9, 10]).unwrap();
        let p = ShapeParams::default();
        let a = synthetic_target(&p, &backend, &spec, 0.05, 9).unwrap();
        let b = synthetic_target(&p, &backend, &spec, 0.05, 9).unwrap();
        let clean = synthetic_target(&p, &backend, &spec, 0.0, 9).unwrap();
        assert_eq!(a.grid, b.grid);
        assert_ne!(a.grid, clean.grid);
        assert!(synthetic_target(&p, &backend, &spec, -1.0, 9).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig { restarts: 0, ..FitConfig::default() }.validate().is_err());
        assert!(FitConfig { initial_step: 0.0, ..FitConfig::default() }.validate().is_err());
        assert!(FitConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn mse_objective_is_non_negative(u in prop::array::uniform4(-1.0f64..=1.0), seed in 0u64..4) {
            let spec = GridSpec::new(Vec3::new(-5.0, -5.0, -2.0), 1.2, [9, 9, 10]).unwrap();
            let backend = FitBackend::mesh(BackendId::Bvh);
            let truth = synthetic_params(1, seed, 1.0)[0];
            let target = synthetic_target(&truth, &backend, &spec, 0.0, 0).unwrap();
            let v = objective_mse(&ShapeParams::from_normalized(u), &target, &backend).unwrap();
            prop_assert!(v >= 0.0);
        }

        #[test]
        fn folded_points_stay_in_range(u in -10.0f64..10.0) {
            let f = fold_unit(u);
            prop_assert!((-1.0..=1.0).contains(&f));
        }
    }
}
