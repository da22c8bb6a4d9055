//! Single-SDM timings per backend.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use sdmforge_core::cochlea::{default_grid_spec, tessellate, ShapeParams, TessellationSpec};
use sdmforge_core::engines::{build_bvh, sdm_bvh, sdm_edt, sdm_naive, worker_count, BackendId};
use sdmforge_core::surrogate::{forward, pw_fill_grid, PointwiseModel, SurrogateModel};
use sdmforge_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: BackendId,
    pub task: String,
    /// Median wall-clock seconds.
    pub seconds: f64,
    pub dims: [usize; 3],
    /// Triangles in the input mesh; 0 for mesh-free methods.
    pub triangles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEnvironment {
    pub cpu: String,
    pub build: String,
    pub workers: usize,
    pub repeat: usize,
    pub params: ShapeParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub environment: BenchEnvironment,
}

impl BenchReport {
    pub fn seconds(&self, method: BackendId, task: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.task == task)
            .map(|r| r.seconds)
    }

    /// `slow / fast` for the single-SDM task.
    pub fn speedup(&self, fast: BackendId, slow: BackendId) -> Option<f64> {
        Some(self.seconds(slow, TASK_SDM)? / self.seconds(fast, TASK_SDM)?)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "method,task,seconds,dims,triangles")?;
        for r in &self.rows {
            let [x, y, z] = r.dims;
            writeln!(w, "{},{},{:.6},{x}x{y}x{z},{}", r.method, r.task, r.seconds, r.triangles)?;
        }
        Ok(())
    }
}

pub const TASK_TESSELLATE: &str = "tessellate";
pub const TASK_BVH_BUILD: &str = "bvh_build";
pub const TASK_SDM: &str = "single_sdm";

pub struct BenchOptions<'a> {
    pub repeat: usize,
    pub params: ShapeParams,
    pub methods: Vec<BackendId>,
    pub surrogate: Option<&'a SurrogateModel>,
    pub pointwise: Option<&'a PointwiseModel>,
}

fn median_seconds<T>(repeat: usize, mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    let mut times = Vec::with_capacity(repeat);
    for _ in 0..repeat.max(1) {
        let t = Instant::now();
        std::hint::black_box(f()?);
        times.push(t.elapsed().as_secs_f64().max(1e-9));
    }
    times.sort_by(f64::total_cmp);
    let n = times.len();
    Ok(if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    })
}

fn cpu_description() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string())
}

/// Times every requested method on the default grid. Mesh construction and
/// BVH construction get their own rows; `single_sdm` times only the
/// distance computation.
pub fn run_bench(opts: &BenchOptions) -> Result<BenchReport> {
    if opts.repeat == 0 {
        return Err(Error::InvalidConfig("repeat must be at least 1".into()));
    }
    let spec = default_grid_spec();
    let tess = TessellationSpec::default();
    let p = opts.params;
    p.validate()?;
    let mesh = tessellate(&p, &tess)?;
    let mut rows = Vec::new();
    let mut row = |method, task: &str, seconds, triangles| {
        rows.push(BenchRow {
            method,
            task: task.to_string(),
            seconds,
            dims: spec.dims,
            triangles,
        })
    };
    for &method in &opts.methods {
        let nt = mesh.len();
        match method {
            BackendId::Naive => {
                row(method, TASK_TESSELLATE, median_seconds(opts.repeat, || tessellate(&p, &tess))?, nt);
                row(method, TASK_SDM, median_seconds(opts.repeat, || sdm_naive(&mesh, &spec))?, nt);
            }
            BackendId::Bvh => {
                row(method, TASK_TESSELLATE, median_seconds(opts.repeat, || tessellate(&p, &tess))?, nt);
                row(method, TASK_BVH_BUILD, median_seconds(opts.repeat, || build_bvh(&mesh))?, nt);
                let bvh = build_bvh(&mesh)?;
                row(method, TASK_SDM, median_seconds(opts.repeat, || sdm_bvh(&mesh, &bvh, &spec))?, nt);
            }
            BackendId::Edt => {
                row(method, TASK_TESSELLATE, median_seconds(opts.repeat, || tessellate(&p, &tess))?, nt);
                row(method, TASK_SDM, median_seconds(opts.repeat, || sdm_edt(&mesh, &spec))?, nt);
            }
            BackendId::Surrogate => {
                let model = opts.surrogate.ok_or_else(|| {
                    Error::BackendUnavailable(method.to_string(), "no trained model given".into())
                })?;
                row(method, TASK_SDM, median_seconds(opts.repeat, || forward(model, &p))?, 0);
            }
            BackendId::Pointwise => {
                let model = opts.pointwise.ok_or_else(|| {
                    Error::BackendUnavailable(method.to_string(), "no trained model given".into())
                })?;
                row(method, TASK_SDM, median_seconds(opts.repeat, || pw_fill_grid(model, &p, &spec))?, 0);
            }
        }
    }
    Ok(BenchReport {
        rows,
        environment: BenchEnvironment {
            cpu: cpu_description(),
            build: if cfg!(debug_assertions) { "debug" } else { "release" }.to_string(),
            workers: worker_count(),
            repeat: opts.repeat,
            params: p,
        },
    })
}
