use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use sdmforge_bench::{coarse_spec, default_mesh};
use sdmforge_core::cochlea::{default_grid_spec, tessellate, ShapeParams, TessellationSpec};
use sdmforge_core::engines::{build_bvh, sdm_bvh, sdm_bvh_clamped, sdm_edt, sdm_naive, CLAMP_HI, CLAMP_LO};

fn mesh_stages(c: &mut Criterion) {
    let p = ShapeParams::default();
    let tess = TessellationSpec::default();
    c.bench_function("tessellate", |b| b.iter(|| tessellate(black_box(&p), &tess).unwrap()));
    let mesh = default_mesh();
    c.bench_function("build_bvh", |b| b.iter(|| build_bvh(black_box(&mesh)).unwrap()));
}

fn engines(c: &mut Criterion) {
    let mesh = default_mesh();
    let bvh = build_bvh(&mesh).unwrap();
    let spec = default_grid_spec();
    let mut g = c.benchmark_group("sdm_default_grid");
    g.sample_size(10);
    g.bench_function("bvh", |b| b.iter(|| sdm_bvh(&mesh, &bvh, black_box(&spec)).unwrap()));
    g.bench_function("bvh_clamped", |b| {
        b.iter(|| sdm_bvh_clamped(&mesh, &bvh, black_box(&spec), CLAMP_LO, CLAMP_HI).unwrap())
    });
    g.bench_function("edt", |b| b.iter(|| sdm_edt(&mesh, black_box(&spec)).unwrap()));
    g.finish();

    // The brute-force engine is timed on a 5x coarser grid.
    let coarse = coarse_spec(5);
    let mut g = c.benchmark_group("sdm_coarse_grid");
    g.sample_size(10);
    g.bench_function("naive", |b| b.iter(|| sdm_naive(&mesh, black_box(&coarse)).unwrap()));
    g.bench_function("bvh", |b| b.iter(|| sdm_bvh(&mesh, &bvh, black_box(&coarse)).unwrap()));
    g.finish();
}

criterion_group!(benches, mesh_stages, engines);
criterion_main!(benches);
