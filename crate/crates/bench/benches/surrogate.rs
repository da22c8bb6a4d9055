use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use sdmforge_bench::coarse_spec;
use sdmforge_core::cochlea::{default_grid_spec, ShapeParams};
use sdmforge_core::isosurface::marching_cubes;
use sdmforge_core::surrogate::{forward, init_model, loss_and_gradient, pw_fill_grid, PointwiseModel};

// Timings do not depend on the weight values, so untrained models are used.
fn inference(c: &mut Criterion) {
    let p = ShapeParams::default();
    let model = init_model(0);
    let mut g = c.benchmark_group("inference");
    g.sample_size(20);
    g.bench_function("grid_decoder", |b| b.iter(|| forward(&model, black_box(&p)).unwrap()));
    let pw = PointwiseModel::new(0, &default_grid_spec());
    let coarse = coarse_spec(2);
    g.bench_function("pointwise_half_res", |b| b.iter(|| pw_fill_grid(&pw, black_box(&p), &coarse).unwrap()));
    g.finish();
}

fn training_step(c: &mut Criterion) {
    let model = init_model(0);
    let p = ShapeParams::default();
    let target = forward(&init_model(1), &p).unwrap();
    let batch = [(p, target)];
    let mut g = c.benchmark_group("training");
    g.sample_size(10);
    g.bench_function("loss_and_gradient_1", |b| b.iter(|| loss_and_gradient(&model, black_box(&batch)).unwrap()));
    g.finish();
}

fn isosurface(c: &mut Criterion) {
    let s = forward(&init_model(0), &ShapeParams::default()).unwrap();
    let (lo, hi) = s.min_max();
    let iso = 0.5 * (lo + hi) as f64;
    c.bench_function("marching_cubes", |b| b.iter(|| marching_cubes(black_box(&s), iso)));
}

criterion_group!(benches, inference, training_step, isosurface);
criterion_main!(benches);
