//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. `SDMFORGE_ACCEPTANCE=1,4,9` runs a subset.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdmforge_core::cochlea::{default_grid_spec, sample_random_params, tessellate, ShapeParams, TessellationSpec};
use sdmforge_core::engines::{
    build_bvh, clamp_grid, edt_squared, rasterize, sdm_bvh, sdm_bvh_clamped, sdm_edt, sdm_naive, BackendId,
    CLAMP_HI, CLAMP_LO,
};
use sdmforge_core::fit::{
    compare_fits, fit_shape, synthetic_params, synthetic_target, FitBackend, FitConfig, RANGE_LABELS,
};
use sdmforge_core::geometry::meshio::{read_obj, read_stl};
use sdmforge_core::geometry::shapes::icosphere;
use sdmforge_core::geometry::point_in_mesh;
use sdmforge_core::io::{read_raw, read_vtk, write_raw, write_vtk};
use sdmforge_core::isosurface::{marching_cubes, surface_distance};
use sdmforge_core::surrogate::{
    forward, init_model_with, load_model, load_pointwise, load_surrogate, loss_and_gradient_raw, pw_fill_grid,
    save_surrogate, Architecture, ModelFile, PointwiseModel, SurrogateModel,
};
use sdmforge_core::{BinaryGrid, GridSpec, ScalarGrid, Vec3};

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn surrogate() -> Result<SurrogateModel, Box<dyn std::error::Error>> {
    Ok(load_surrogate(&models_dir().join("surrogate.json"))?)
}

fn pointwise() -> Result<PointwiseModel, Box<dyn std::error::Error>> {
    Ok(load_pointwise(&models_dir().join("pointwise.json"))?)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn time<T>(repeat: usize, mut f: impl FnMut() -> T) -> f64 {
    median(
        (0..repeat)
            .map(|_| {
                let t = Instant::now();
                std::hint::black_box(f());
                t.elapsed().as_secs_f64()
            })
            .collect(),
    )
}

fn width(i: usize) -> f64 {
    let (lo, hi) = sdmforge_core::cochlea::PARAM_RANGES[i];
    hi - lo
}

fn backend_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = default_grid_spec();
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let p = sample_random_params(&mut rng);
        let mesh = tessellate(&p, &TessellationSpec::default())?;
        let naive = sdm_naive(&mesh, &spec)?;
        let bvh = sdm_bvh(&mesh, &build_bvh(&mesh)?, &spec)?;
        worst = worst.max(bvh.max_abs_diff(&naive)?);
    }
    Ok((worst <= 1e-6, format!("max |bvh - naive| = {worst:.3e} mm over 5 shapes")))
}

fn edt_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = GridSpec::new(Vec3::ZERO, 1.0, [20, 20, 20])?;
    let mut mismatches = 0usize;
    for g in 0..50 {
        let density = 0.005 + 0.3 * g as f64 / 50.0;
        let values: Vec<bool> = (0..spec.len()).map(|_| rng.gen_bool(density)).collect();
        let set: Vec<[usize; 3]> = (0..spec.len()).filter(|&i| values[i]).map(|i| spec.coords(i)).collect();
        let edt = edt_squared(&BinaryGrid::new(spec, values)?);
        for i in 0..spec.len() {
            let c = spec.coords(i);
            let brute = set
                .iter()
                .map(|s| (0..3).map(|a| (c[a] as i64 - s[a] as i64).pow(2)).sum::<i64>())
                .min();
            let got = edt.grid.values()[i];
            let ok = match brute {
                Some(d) => got == d as f32,
                None => edt.empty,
            };
            mismatches += usize::from(!ok);
        }
    }
    Ok((mismatches == 0, format!("{mismatches} mismatching voxels over 50 random 20^3 grids")))
}

fn edt_consistency() -> Outcome {
    let spec = default_grid_spec();
    let mesh = tessellate(&ShapeParams::default(), &TessellationSpec::default())?;
    let naive = sdm_naive(&mesh, &spec)?;
    let edt = sdm_edt(&mesh, &spec)?.grid;
    let tol = 0.347;
    let (mut near, mut good) = (0usize, 0usize);
    for (&n, &e) in naive.values().iter().zip(edt.values()) {
        if (n as f64).abs() <= 1.0 {
            near += 1;
            good += usize::from(((e - n) as f64).abs() <= tol);
        }
    }
    let frac = good as f64 / near as f64;
    Ok((frac >= 0.99, format!("{:.2}% of {near} near-surface voxels within {tol:.3} mm", 100.0 * frac)))
}

fn speed_ordering() -> Outcome {
    let model = surrogate()?;
    let pw = pointwise()?;
    let spec = default_grid_spec();
    let p = ShapeParams::default();
    let mesh = tessellate(&p, &TessellationSpec::default())?;
    forward(&model, &p)?;
    let t_naive = time(3, || sdm_naive(&mesh, &spec).unwrap());
    let t_sur = time(7, || forward(&model, &p).unwrap());
    let t_pw = time(3, || pw_fill_grid(&pw, &p, &spec).unwrap());
    let speedup = t_naive / t_sur;
    let pw_ratio = t_pw / t_sur;
    Ok((
        speedup >= 10.0 && pw_ratio >= 2.0,
        format!(
            "naive {t_naive:.3} s, surrogate {t_sur:.4} s ({speedup:.1}x faster), pointwise {t_pw:.3} s ({pw_ratio:.1}x slower than surrogate)"
        ),
    ))
}

fn surrogate_accuracy() -> Outcome {
    let model = surrogate()?;
    let spec = default_grid_spec();
    let tess = TessellationSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(20_241_018);
    let mut total = 0.0;
    let mut distances = Vec::new();
    for i in 0..20 {
        let p = sample_random_params(&mut rng);
        let mesh = tessellate(&p, &tess)?;
        let reference = sdm_bvh_clamped(&mesh, &build_bvh(&mesh)?, &spec, CLAMP_LO, CLAMP_HI)?;
        let pred = forward(&model, &p)?;
        total += pred.mse(&reference)?;
        if i < 5 {
            let a = marching_cubes(&pred, 0.0).to_mesh()?;
            let b = marching_cubes(&reference, 0.0).to_mesh()?;
            distances.push(surface_distance(&a, &b, 2000)?.mean);
        }
    }
    let mse = total / 20.0;
    let mean_distance = distances.iter().sum::<f64>() / distances.len() as f64;
    Ok((
        mse <= 0.01 && mean_distance <= 0.2,
        format!("held-out MSE {mse:.5} mm^2 (20 shapes), mean zero-surface distance {mean_distance:.4} mm (5 shapes)"),
    ))
}

fn fit_recovery() -> Outcome {
    let backend = FitBackend::mesh(BackendId::Bvh);
    let truth = synthetic_params(1, 6, 0.8)[0];
    let target = synthetic_target(&truth, &backend, &default_grid_spec(), 0.0, 0)?;
    let r = fit_shape(&target, &backend, &FitConfig { seed: 6, ..FitConfig::default() })?;
    let (got, want) = (r.params.to_array(), truth.to_array());
    let rel: Vec<f64> = (0..4).map(|i| (got[i] - want[i]).abs() / width(i)).collect();
    let worst = rel.iter().cloned().fold(0.0, f64::max);
    Ok((
        worst <= 0.01 && r.seconds <= 900.0,
        format!(
            "worst parameter error {:.3}% of range, {} evaluations, {:.0} s",
            100.0 * worst,
            r.evaluations,
            r.seconds
        ),
    ))
}

fn fit_consistency() -> Outcome {
    let model = surrogate()?;
    let reference = FitBackend::mesh(BackendId::Bvh);
    let candidate = FitBackend::Surrogate(&model);
    let spec = default_grid_spec();
    let seed = 7;
    let targets = synthetic_params(9, seed, 0.8)
        .iter()
        .enumerate()
        .map(|(i, p)| Ok((Some(*p), synthetic_target(p, &reference, &spec, 0.0, seed + i as u64)?)))
        .collect::<Result<Vec<_>, sdmforge_core::Error>>()?;
    let cmp = compare_fits(&targets, &reference, &candidate, &FitConfig { seed, ..FitConfig::default() })?;
    let rel = cmp.relative_mean_diff();
    let mut table = Vec::new();
    cmp.write_table_csv(&mut table)?;
    let table = String::from_utf8(table)?;
    let expected_ranges = format!(
        "Parameters Range,{}",
        RANGE_LABELS.map(|r| format!("\"{r}\"")).join(",")
    );
    let ranges_ok = table.lines().nth(1) == Some(expected_ranges.as_str())
        && RANGE_LABELS == ["(2.0, 5.0)", "(0.0, 1.2)", "(0.05, 0.25)", "(-pi/4, pi/4)"];
    let worst = rel.iter().cloned().fold(0.0, f64::max);
    Ok((
        worst <= 0.02 && ranges_ok,
        format!(
            "mean |mesh - surrogate| / range: a {:.3}% alpha {:.3}% b {:.3}% phi {:.3}%; ranges row {}",
            100.0 * rel[0],
            100.0 * rel[1],
            100.0 * rel[2],
            100.0 * rel[3],
            if ranges_ok { "exact" } else { "wrong" }
        ),
    ))
}

fn fit_speedup() -> Outcome {
    let model = surrogate()?;
    let truth = synthetic_params(1, 8, 0.8)[0];
    let target = synthetic_target(&truth, &FitBackend::mesh(BackendId::Bvh), &default_grid_spec(), 0.0, 0)?;
    // The naive engine takes seconds per SDM; both fits share a capped budget.
    let cfg = FitConfig {
        restarts: 1,
        max_evaluations: 40,
        seed: 8,
        ..FitConfig::default()
    };
    let naive = fit_shape(&target, &FitBackend::mesh(BackendId::Naive), &cfg)?;
    let sur = fit_shape(&target, &FitBackend::Surrogate(&model), &cfg)?;
    let ratio = sur.seconds / naive.seconds;
    Ok((
        ratio <= 0.5,
        format!(
            "surrogate fit {:.2} s ({} evals) vs naive fit {:.1} s ({} evals): ratio {ratio:.4}",
            sur.seconds, sur.evaluations, naive.seconds, naive.evaluations
        ),
    ))
}

fn eikonal_and_sign() -> Result<(bool, String), Box<dyn std::error::Error>> {
    let spec = default_grid_spec();
    let mesh = tessellate(&ShapeParams::default(), &TessellationSpec::default())?;
    let naive = sdm_naive(&mesh, &spec)?;
    let [nx, ny, nz] = spec.dims;
    let (mut band, mut unit) = (0usize, 0usize);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let v = (naive.get(i, j, k) as f64).abs();
                if v > 0.3 && v < 1.0 {
                    if let Some(g) = naive.gradient_norm(i, j, k) {
                        band += 1;
                        unit += usize::from((0.85..=1.15).contains(&g));
                    }
                }
            }
        }
    }
    let eikonal = unit as f64 / band as f64;

    let inside = rasterize(&mesh, &spec)?;
    let mut sign_errors = 0usize;
    let mut far = Vec::new();
    for (idx, (&v, &occ)) in naive.values().iter().zip(inside.values()).enumerate() {
        if (v as f64).abs() > spec.spacing {
            sign_errors += usize::from((v < 0.0) != occ);
            far.push(idx);
        }
    }
    // Independent random-direction parity on a sample of the same voxels.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let idx = far[rng.gen_range(0..far.len())];
        let inside = point_in_mesh(spec.center_of(idx), &mesh)?;
        sign_errors += usize::from((naive.values()[idx] < 0.0) != inside);
    }
    Ok((
        eikonal >= 0.9 && sign_errors == 0,
        format!(
            "eikonal {:.2}% of {band} band voxels; {sign_errors} sign/parity disagreements",
            100.0 * eikonal
        ),
    ))
}

fn edge_lengths() -> (bool, String) {
    let mesh = tessellate(&ShapeParams::default(), &TessellationSpec::default()).unwrap();
    let lengths = mesh.edge_lengths();
    let within = lengths.iter().filter(|&&l| (0.15..=0.45).contains(&l)).count();
    let frac = within as f64 / lengths.len() as f64;
    (frac >= 0.9, format!("{:.2}% of {} edges in [0.15, 0.45] mm", 100.0 * frac, lengths.len()))
}

fn gradient_check() -> Result<(bool, String), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n_out = Architecture::reduced().grid.len();
    let samples: Vec<([f64; 4], Vec<f64>)> = (0..2)
        .map(|_| {
            let p = [0; 4].map(|_| rng.gen_range(-1.0..1.0));
            (p, (0..n_out).map(|_| rng.gen_range(-0.2..1.3)).collect())
        })
        .collect();
    let batch: Vec<([f64; 4], &[f64])> = samples.iter().map(|(p, t)| (*p, t.as_slice())).collect();
    let model = (0..64)
        .map(|seed| init_model_with(Architecture::reduced(), seed).unwrap())
        .find(|m| {
            let w: Vec<f64> = m.weights().iter().map(|&v| v as f64).collect();
            let (_, g) = loss_and_gradient_raw(m, &w, &batch).unwrap();
            g[m.tensor("head.weight").unwrap().range()].iter().all(|&v| v != 0.0)
        })
        .ok_or("no live reduced net")?;
    let w: Vec<f64> = model.weights().iter().map(|&v| v as f64).collect();
    let (_, grad) = loss_and_gradient_raw(&model, &w, &batch)?;
    let floor = 1e-8 * grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let h = 1e-3;
    let (mut checked, mut worst) = (0, 0.0f64);
    for _ in 0..5000 {
        if checked == 100 {
            break;
        }
        let i = rng.gen_range(0..w.len());
        let mut wp = w.clone();
        wp[i] += h;
        let mut wm = w.clone();
        wm[i] -= h;
        let fd = (loss_and_gradient_raw(&model, &wp, &batch)?.0 - loss_and_gradient_raw(&model, &wm, &batch)?.0)
            / (2.0 * h);
        let scale = fd.abs().max(grad[i].abs());
        if scale < floor {
            continue;
        }
        worst = worst.max((fd - grad[i]).abs() / scale);
        checked += 1;
    }
    Ok((checked == 100 && worst <= 1e-4, format!("{checked} weights, worst relative error {worst:.2e}")))
}

fn sphere_isosurface() -> Result<(bool, String), Box<dyn std::error::Error>> {
    let spec = GridSpec::new(Vec3::new(-4.0, -4.0, -4.0), 0.2, [41, 41, 41])?;
    let s = ScalarGrid::from_fn(spec, |p| p.norm() - 3.0);
    let m = marching_cubes(&s, 0.0);
    let worst = m.vertices.iter().map(|v| (v.norm() - 3.0).abs()).fold(0.0, f64::max);
    Ok((!m.is_empty() && worst <= 0.1, format!("worst vertex radius error {worst:.4} mm")))
}

fn io_round_trips() -> Result<(bool, String), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut failures = Vec::new();
    let spec = GridSpec::new(Vec3::new(-1.0, 0.5, 2.0), 0.2, [7, 5, 6])?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = ScalarGrid::new(spec, (0..spec.len()).map(|_| rng.gen_range(-3.0f32..3.0)).collect())?;

    let raw = dir.path().join("g.raw");
    write_raw(&g, &raw, None)?;
    if read_raw(&raw)?.0 != g {
        failures.push("raw");
    }
    let vtk = dir.path().join("g.vtk");
    write_vtk(&g, &vtk, "round trip")?;
    if read_vtk(&vtk)?.max_abs_diff(&g)? > 1e-6 {
        failures.push("vtk");
    }
    let bytes = std::fs::read(&raw)?;
    std::fs::write(&raw, &bytes[..bytes.len() - 4])?;
    if read_raw(&raw).is_ok() {
        failures.push("truncated raw accepted");
    }

    let model = init_model_with(Architecture::reduced(), 5)?;
    let path = dir.path().join("m.json");
    save_surrogate(&model, &path)?;
    match load_model(&path)? {
        ModelFile::Grid(m) if m == model => {}
        _ => failures.push("model"),
    }

    let sphere = icosphere(1.0, 2);
    let obj = dir.path().join("s.obj");
    sphere.write_obj(std::fs::File::create(&obj)?)?;
    let (v, f) = read_obj(std::io::BufReader::new(std::fs::File::open(&obj)?))?;
    if f != sphere.faces() || v.len() != sphere.vertices().len() {
        failures.push("obj");
    }
    let stl = dir.path().join("s.stl");
    sphere.write_stl(std::fs::File::create(&stl)?)?;
    let (_, f) = read_stl(std::fs::File::open(&stl)?)?;
    if f.len() != sphere.len() {
        failures.push("stl");
    }
    let clamped = clamp_grid(&g, CLAMP_LO, CLAMP_HI);
    let (lo, hi) = clamped.min_max();
    if lo < CLAMP_LO || hi > CLAMP_HI {
        failures.push("clamp");
    }
    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            "raw, vtk, truncation, model, obj, stl".to_string()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    ))
}

fn property_suites() -> Outcome {
    let parts: Vec<(&str, bool, String)> = vec![
        ("eikonal/sign", eikonal_and_sign()?),
        ("edges", edge_lengths()),
        ("gradient", gradient_check()?),
        ("sphere", sphere_isosurface()?),
        ("io", io_round_trips()?),
    ]
    .into_iter()
    .map(|(n, (ok, d))| (n, ok, d))
    .collect();
    let ok = parts.iter().all(|p| p.1);
    let detail = parts
        .iter()
        .map(|(n, ok, d)| format!("{n} {} ({d})", if *ok { "ok" } else { "FAILED" }))
        .collect::<Vec<_>>()
        .join("; ");
    Ok((ok, detail))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "backend oracle equivalence", backend_equivalence),
        (2, "EDT exactness", edt_exactness),
        (3, "EDT vs mesh consistency", edt_consistency),
        (4, "speed ordering", speed_ordering),
        (5, "surrogate accuracy", surrogate_accuracy),
        (6, "fit recovery", fit_recovery),
        (7, "fit consistency", fit_consistency),
        (8, "fit speedup", fit_speedup),
        (9, "property suites", property_suites),
    ];
    let selected: Option<Vec<u32>> = std::env::var("SDMFORGE_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, run) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let (ok, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!ok);
        println!(
            "criterion {id} {}: {name}: {detail} [{:.0} s]",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
