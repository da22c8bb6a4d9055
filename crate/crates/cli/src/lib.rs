//! The `sdmforge` command line: generate SDMs, train and run the surrogates,
//! fit shapes, benchmark backends, extract level sets and compare fits.

pub mod bench;
mod error;
pub mod files;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sdmforge_core::cochlea::{default_grid_spec, tessellate, ShapeParams, TessellationSpec};
use sdmforge_core::engines::{clamp_grid, mesh_sdm, BackendId, CLAMP_HI, CLAMP_LO};
use sdmforge_core::fit::{
    compare_fits, fit_shape, synthetic_params, synthetic_target, FitBackend, FitConfig, FitResult,
    FitTarget, Objective,
};
use sdmforge_core::io::{write_atomic, write_pgm_slice};
use sdmforge_core::isosurface::{marching_cubes, slice_isocontours, write_contours_csv};
use sdmforge_core::surrogate::{
    build_static_set, forward, init_model, pw_fill_grid, pw_train_with_progress, save_pointwise,
    save_surrogate, train_with_progress, ModelFile, PointwiseModel, PwTrainConfig, StaticSet,
    SurrogateModel, TrainConfig,
};
use sdmforge_core::ScalarGrid;

pub use bench::{run_bench, BenchOptions, BenchReport, BenchRow};
pub use error::{CliError, EXIT_FAILURE, EXIT_IO, EXIT_MISSING, EXIT_USAGE};
use files::{ensure_parent, parse_slice, read_grid, read_model, write_grid_files};

#[derive(Debug, Parser)]
#[command(name = "sdmforge", version, about = "Signed distance maps of a parametric cochlea model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ShapeArgs {
    /// Basal spiral radius, mm, in [2, 5].
    #[arg(long, default_value_t = 3.5, allow_hyphen_values = true)]
    pub a: f64,
    /// Radial decay per turn, in [0, 1.2].
    #[arg(long, default_value_t = 0.6, allow_hyphen_values = true)]
    pub alpha: f64,
    /// Vertical rise, mm per radian, in [0.05, 0.25].
    #[arg(long, default_value_t = 0.15, allow_hyphen_values = true)]
    pub b: f64,
    /// Initial phase, radians, in [-pi/4, pi/4].
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub phi: f64,
}

impl ShapeArgs {
    pub fn params(&self) -> Result<ShapeParams, CliError> {
        Ok(ShapeParams::new(self.a, self.alpha, self.b, self.phi)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    /// Parameter-to-grid decoder.
    Grid,
    /// Coordinate network evaluated per voxel.
    Pointwise,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write an untrained model.
    Init {
        #[arg(long, value_enum, default_value_t = ModelKind::Grid)]
        kind: ModelKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "models/surrogate.json")]
        out: PathBuf,
    },
    /// Generate one SDM as VTK plus raw payload and sidecar.
    Sdm {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long, default_value = "bvh")]
        backend: String,
        /// Model file for the surrogate and pointwise backends.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Output stem; `.vtk`, `.raw` and `.json` are appended.
        #[arg(long, default_value = "sdm")]
        out: PathBuf,
        /// Clamp values to the reference band.
        #[arg(long)]
        clamp: bool,
        /// Also write a PGM image of one slice, e.g. `z:30`.
        #[arg(long)]
        slice: Option<String>,
    },
    /// Train a model and write it.
    Train {
        #[arg(long, value_enum, default_value_t = ModelKind::Grid)]
        kind: ModelKind,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Cosine decay target as a fraction of `--lr`; 1 keeps it constant.
        #[arg(long, default_value_t = 1.0)]
        final_lr_fraction: f64,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        /// Lattice points per parameter in the precomputed training set.
        #[arg(long, default_value_t = 5)]
        static_per_axis: usize,
        /// Share of each batch drawn from the precomputed set.
        #[arg(long, default_value_t = 0.5)]
        static_ratio: f64,
        /// Start from this model instead of a fresh one.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Per-step loss as CSV.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[arg(long, default_value = "models/surrogate.json")]
        out: PathBuf,
    },
    /// Evaluate a trained model at one parameter vector.
    Infer {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long, default_value = "models/surrogate.json")]
        model: PathBuf,
        #[arg(long, default_value = "infer")]
        out: PathBuf,
        #[arg(long)]
        clamp: bool,
    },
    /// Fit shape parameters to a grid file, or to a synthetic target built
    /// from the shape flags.
    Fit {
        #[command(flatten)]
        shape: ShapeArgs,
        /// Target grid (`.vtk`, `.raw` or `.json`).
        #[arg(long)]
        target: Option<PathBuf>,
        /// Gaussian noise added to a synthetic target, mm.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value = "bvh")]
        backend: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        restarts: usize,
        #[arg(long, value_enum, default_value_t = ObjectiveArg::Mse)]
        objective: ObjectiveArg,
        /// Objective evaluations allowed per restart.
        #[arg(long, default_value_t = FitConfig::default().max_evaluations)]
        max_evaluations: usize,
        #[arg(long, default_value = "fit.json")]
        out: PathBuf,
    },
    /// Time a single SDM per backend and write a CSV report.
    Bench {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long, default_value_t = 3)]
        repeat: usize,
        /// Grid decoder; its row is skipped when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Point-wise model; its row is skipped when absent.
        #[arg(long)]
        pointwise_model: Option<PathBuf>,
        /// Comma-separated methods to time.
        #[arg(long, default_value = "naive,bvh,edt,surrogate,pointwise")]
        methods: String,
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
    },
    /// Marching-cubes mesh of a grid file, optionally with slice contours.
    Extract {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        iso: f64,
        /// `.obj` or `.stl`.
        #[arg(long, default_value = "surface.obj")]
        out: PathBuf,
        /// Slice for contours, e.g. `z:30`.
        #[arg(long)]
        contours: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,1", allow_hyphen_values = true)]
        levels: Vec<f64>,
        #[arg(long, default_value = "contours.csv")]
        contours_out: PathBuf,
    },
    /// Fit synthetic targets with a mesh backend and a second backend and
    /// tabulate the parameter differences.
    Compare {
        #[arg(long, default_value_t = 9)]
        cases: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Reference mesh backend.
        #[arg(long, default_value = "bvh")]
        backend: String,
        #[arg(long, default_value = "surrogate")]
        candidate: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        restarts: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = FitConfig::default().max_evaluations)]
        max_evaluations: usize,
        /// Summary table; per-case rows go next to it with a `_cases` suffix.
        #[arg(long, default_value = "compare.csv")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Mse,
    Logodds,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Mse => Objective::Mse,
            ObjectiveArg::Logodds => Objective::Logodds,
        }
    }
}

/// Models a command may need, loaded once.
enum Loaded {
    None,
    Grid(SurrogateModel),
    Pointwise(PointwiseModel),
}

impl Loaded {
    fn for_backend(backend: BackendId, model: Option<&Path>) -> Result<Self, CliError> {
        if backend.is_mesh_based() {
            return Ok(Loaded::None);
        }
        let path = model.ok_or_else(|| {
            CliError::MissingArtifact(format!("backend {backend} needs --model"))
        })?;
        match (backend, read_model(path)?) {
            (BackendId::Surrogate, ModelFile::Grid(m)) => Ok(Loaded::Grid(m)),
            (BackendId::Pointwise, ModelFile::Pointwise(m)) => Ok(Loaded::Pointwise(m)),
            (b, _) => Err(CliError::Usage(format!(
                "{} does not hold a {b} model",
                path.display()
            ))),
        }
    }

    fn fit_backend(&self, backend: BackendId) -> FitBackend<'_> {
        match self {
            Loaded::Grid(m) => FitBackend::Surrogate(m),
            Loaded::Pointwise(m) => FitBackend::Pointwise(m),
            Loaded::None => FitBackend::mesh(backend),
        }
    }
}

fn parse_backend(s: &str) -> Result<BackendId, CliError> {
    Ok(s.parse::<BackendId>()?)
}

fn sdm_for(backend: BackendId, loaded: &Loaded, p: &ShapeParams) -> Result<ScalarGrid, CliError> {
    let spec = default_grid_spec();
    Ok(match loaded {
        Loaded::None => mesh_sdm(backend, &tessellate(p, &TessellationSpec::default())?, &spec)?,
        Loaded::Grid(m) => forward(m, p)?,
        Loaded::Pointwise(m) => pw_fill_grid(m, p, &spec)?,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    ensure_parent(path)?;
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })?;
    Ok(())
}

fn save_grid(
    grid: ScalarGrid,
    out: &Path,
    clamp: bool,
    title: &str,
    slice: Option<&str>,
) -> Result<(), CliError> {
    let (grid, bounds) = if clamp {
        (clamp_grid(&grid, CLAMP_LO, CLAMP_HI), Some((CLAMP_LO, CLAMP_HI)))
    } else {
        (grid, None)
    };
    let paths = write_grid_files(&grid, out, bounds, title)?;
    println!("wrote {} and {}", paths.vtk.display(), paths.raw.display());
    if let Some(s) = slice {
        let (axis, index) = parse_slice(s)?;
        let mut name = files::grid_stem(out).into_os_string();
        name.push(format!("_{axis}{index}.pgm"));
        let pgm = PathBuf::from(name);
        write_pgm_slice(&grid, axis, index, CLAMP_LO, CLAMP_HI, &pgm)?;
        println!("wrote {}", pgm.display());
    }
    Ok(())
}

fn title(backend: BackendId, p: &ShapeParams) -> String {
    format!("sdmforge {backend} a={} alpha={} b={} phi={}", p.a, p.alpha, p.b, p.phi)
}

#[derive(Serialize)]
struct FitReport<'a> {
    truth: Option<ShapeParams>,
    target: Option<&'a Path>,
    noise: f64,
    result: &'a FitResult,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Init { kind, seed, out } => {
            ensure_parent(out)?;
            match kind {
                ModelKind::Grid => save_surrogate(&init_model(*seed), out)?,
                ModelKind::Pointwise => save_pointwise(&PointwiseModel::new(*seed, &default_grid_spec()), out)?,
            }
            println!("wrote {}", out.display());
        }
        Command::Sdm {
            shape,
            backend,
            model,
            out,
            clamp,
            slice,
        } => {
            let p = shape.params()?;
            let backend = parse_backend(backend)?;
            let loaded = Loaded::for_backend(backend, model.as_deref())?;
            let grid = sdm_for(backend, &loaded, &p)?;
            save_grid(grid, out, *clamp, &title(backend, &p), slice.as_deref())?;
        }
        Command::Train {
            kind,
            steps,
            seed,
            lr,
            final_lr_fraction,
            batch,
            static_per_axis,
            static_ratio,
            init,
            loss_csv,
            out,
        } => {
            let every = (*steps / 20).max(1);
            let mut trace = Vec::with_capacity(*steps);
            match kind {
                ModelKind::Grid => {
                    let model = match init {
                        Some(path) => match read_model(path)? {
                            ModelFile::Grid(m) => m,
                            ModelFile::Pointwise(_) => {
                                return Err(CliError::Usage(format!("{} is not a grid model", path.display())))
                            }
                        },
                        None => init_model(*seed),
                    };
                    let cfg = TrainConfig {
                        steps: *steps,
                        learning_rate: *lr,
                        final_lr_fraction: *final_lr_fraction,
                        batch_size: *batch,
                        static_ratio: *static_ratio,
                        seed: *seed,
                        ..TrainConfig::default()
                    };
                    cfg.validate()?;
                    let set = if *steps > 0 && cfg.static_per_batch() > 0 {
                        eprintln!("building {} reference SDMs", static_per_axis.pow(4));
                        build_static_set(*static_per_axis, &cfg, &model.architecture().grid)?
                    } else {
                        StaticSet::default()
                    };
                    let out_model = train_with_progress(&model, &cfg, &set, |s, l| {
                        trace.push(l);
                        if (s + 1) % every == 0 {
                            eprintln!("step {} loss {l:.5}", s + 1);
                        }
                    })?
                    .model;
                    ensure_parent(out)?;
                    save_surrogate(&out_model, out)?;
                }
                ModelKind::Pointwise => {
                    let model = match init {
                        Some(path) => match read_model(path)? {
                            ModelFile::Pointwise(m) => m,
                            ModelFile::Grid(_) => {
                                return Err(CliError::Usage(format!("{} is not a pointwise model", path.display())))
                            }
                        },
                        None => PointwiseModel::new(*seed, &default_grid_spec()),
                    };
                    let cfg = PwTrainConfig {
                        steps: *steps,
                        learning_rate: *lr,
                        seed: *seed,
                        ..PwTrainConfig::default()
                    };
                    let (out_model, _) = pw_train_with_progress(&model, &cfg, |s, l| {
                        trace.push(l);
                        if (s + 1) % every == 0 {
                            eprintln!("step {} loss {l:.5}", s + 1);
                        }
                    })?;
                    ensure_parent(out)?;
                    save_pointwise(&out_model, out)?;
                }
            }
            if let Some(path) = loss_csv {
                ensure_parent(path)?;
                write_atomic(path, |w| {
                    writeln!(w, "step,loss")?;
                    for (i, l) in trace.iter().enumerate() {
                        writeln!(w, "{},{l}", i + 1)?;
                    }
                    Ok(())
                })?;
            }
            println!("wrote {}", out.display());
        }
        Command::Infer {
            shape,
            model,
            out,
            clamp,
        } => {
            let p = shape.params()?;
            let (backend, loaded) = match read_model(model)? {
                ModelFile::Grid(m) => (BackendId::Surrogate, Loaded::Grid(m)),
                ModelFile::Pointwise(m) => (BackendId::Pointwise, Loaded::Pointwise(m)),
            };
            let grid = sdm_for(backend, &loaded, &p)?;
            save_grid(grid, out, *clamp, &title(backend, &p), None)?;
        }
        Command::Fit {
            shape,
            target,
            noise,
            backend,
            model,
            seed,
            restarts,
            objective,
            max_evaluations,
            out,
        } => {
            let backend = parse_backend(backend)?;
            let loaded = Loaded::for_backend(backend, model.as_deref())?;
            let fit_backend = loaded.fit_backend(backend);
            let (truth, fit_target) = match target {
                Some(path) => (None, FitTarget::from_sdm(&read_grid(path)?)),
                None => {
                    let p = shape.params()?;
                    let t = synthetic_target(&p, &FitBackend::mesh(BackendId::Bvh), &default_grid_spec(), *noise, *seed)?;
                    (Some(p), t)
                }
            };
            let cfg = FitConfig {
                restarts: *restarts,
                seed: *seed,
                objective: (*objective).into(),
                max_evaluations: *max_evaluations,
                ..FitConfig::default()
            };
            let result = fit_shape(&fit_target, &fit_backend, &cfg)?;
            let p = result.params;
            println!(
                "a {:.6} alpha {:.6} b {:.6} phi {:.6} objective {:.3e} ({} evaluations, {:.1} s)",
                p.a, p.alpha, p.b, p.phi, result.objective, result.evaluations, result.seconds
            );
            write_json(
                out,
                &FitReport {
                    truth,
                    target: target.as_deref(),
                    noise: *noise,
                    result: &result,
                },
            )?;
            println!("wrote {}", out.display());
        }
        Command::Bench {
            shape,
            repeat,
            model,
            pointwise_model,
            methods,
            out,
        } => {
            let mut wanted = methods
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| parse_backend(s.trim()))
                .collect::<Result<Vec<_>, _>>()?;
            let surrogate = match model {
                Some(path) => match read_model(path)? {
                    ModelFile::Grid(m) => Some(m),
                    ModelFile::Pointwise(_) => return Err(CliError::Usage("--model must be a grid model".into())),
                },
                None => None,
            };
            let pointwise = match pointwise_model {
                Some(path) => match read_model(path)? {
                    ModelFile::Pointwise(m) => Some(m),
                    ModelFile::Grid(_) => {
                        return Err(CliError::Usage("--pointwise-model must be a pointwise model".into()))
                    }
                },
                None => None,
            };
            wanted.retain(|b| match b {
                BackendId::Surrogate => surrogate.is_some(),
                BackendId::Pointwise => pointwise.is_some(),
                _ => true,
            });
            let report = run_bench(&BenchOptions {
                repeat: *repeat,
                params: shape.params()?,
                methods: wanted,
                surrogate: surrogate.as_ref(),
                pointwise: pointwise.as_ref(),
            })?;
            ensure_parent(out)?;
            write_atomic(out, |w| report.write_csv(w))?;
            write_json(&out.with_extension("json"), &report)?;
            for r in &report.rows {
                println!("{:<10} {:<11} {:>10.4} s", r.method.as_str(), r.task, r.seconds);
            }
            if let Some(x) = report.speedup(BackendId::Surrogate, BackendId::Naive) {
                println!("surrogate is {x:.1}x faster than naive");
            }
            println!("wrote {}", out.display());
        }
        Command::Extract {
            input,
            iso,
            out,
            contours,
            levels,
            contours_out,
        } => {
            let grid = read_grid(input)?;
            let mesh = marching_cubes(&grid, *iso);
            if let Some(w) = &mesh.warning {
                eprintln!("warning: {w}");
            }
            ensure_parent(out)?;
            let stl = out.extension().is_some_and(|e| e.eq_ignore_ascii_case("stl"));
            write_atomic(out, |w| if stl { mesh.write_stl(w) } else { mesh.write_obj(w) })?;
            println!("wrote {} ({} triangles)", out.display(), mesh.faces.len());
            if let Some(s) = contours {
                let (axis, index) = parse_slice(s)?;
                let sets = slice_isocontours(&grid, axis, index, levels)?;
                ensure_parent(contours_out)?;
                write_atomic(contours_out, |w| write_contours_csv(w, &sets, axis))?;
                println!("wrote {}", contours_out.display());
            }
        }
        Command::Compare {
            cases,
            seed,
            backend,
            candidate,
            model,
            restarts,
            noise,
            max_evaluations,
            out,
        } => {
            let reference = parse_backend(backend)?;
            if !reference.is_mesh_based() {
                return Err(CliError::Usage(format!("reference backend {reference} is not a mesh engine")));
            }
            let candidate = parse_backend(candidate)?;
            let loaded = Loaded::for_backend(candidate, model.as_deref())?;
            let reference_backend = FitBackend::mesh(reference);
            let candidate_backend = loaded.fit_backend(candidate);
            let spec = default_grid_spec();
            let targets = synthetic_params(*cases, *seed, TARGET_FRACTION)
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let t = synthetic_target(p, &reference_backend, &spec, *noise, seed.wrapping_add(i as u64))?;
                    Ok((Some(*p), t))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let cfg = FitConfig {
                restarts: *restarts,
                seed: *seed,
                max_evaluations: *max_evaluations,
                ..FitConfig::default()
            };
            let cmp = compare_fits(&targets, &reference_backend, &candidate_backend, &cfg)?;
            ensure_parent(out)?;
            write_atomic(out, |w| cmp.write_table_csv(w))?;
            let mut cases_path = files::grid_stem(&out.with_extension("")).into_os_string();
            cases_path.push("_cases.csv");
            let cases_path = PathBuf::from(cases_path);
            write_atomic(&cases_path, |w| cmp.write_cases_csv(w))?;
            write_json(&out.with_extension("json"), &cmp)?;
            let rel = cmp.relative_mean_diff();
            println!(
                "mean |difference| / range width: a {:.2e} alpha {:.2e} b {:.2e} phi {:.2e}; mean P_err {:.3e}",
                rel[0], rel[1], rel[2], rel[3], cmp.mean_p_err
            );
            println!("wrote {} and {}", out.display(), cases_path.display());
        }
    }
    Ok(())
}

/// Synthetic ground truths are drawn from this central share of each range.
pub const TARGET_FRACTION: f64 = 0.8;
