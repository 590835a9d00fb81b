use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use levy_refract::estimation::{nu_curve, Coupling};
use levy_refract::levy_model::reference_model;
use levy_refract::path_engine;
use levy_refract::properties::{run_path_suite, PathSuite};
use levy_refract::strategy::{euler_trajectory, strategy_controls};
use levy_refract_bench::{event_path, grid_path, params, sim};
use std::hint::black_box;

fn exact_sweep(c: &mut Criterion) {
    let mut g = c.benchmark_group("exact_sweep");
    for horizon in [10.0, 100.0] {
        let path = event_path(horizon);
        let ctl = strategy_controls(path.drift, &params(1.66));
        g.bench_with_input(BenchmarkId::from_parameter(horizon), &path, |b, p| b.iter(|| path_engine::run(black_box(p), &ctl)));
    }
    g.finish();
}

fn euler_walk(c: &mut Criterion) {
    let mut g = c.benchmark_group("euler_walk");
    for steps in [2_000usize, 10_000] {
        let xs = grid_path(100.0, steps);
        let dt = 100.0 / steps as f64;
        g.bench_with_input(BenchmarkId::from_parameter(steps), &xs, |b, xs| b.iter(|| euler_trajectory(black_box(xs), dt, &params(2.15))));
    }
    g.finish();
}

fn nu_curves(c: &mut Criterion) {
    let grid: Vec<f64> = (0..=449).map(|i| (i as f64 - 100.0) / 100.0).collect();
    let mut g = c.benchmark_group("nu_curve_1000_paths");
    g.sample_size(10);
    g.bench_function("exact", |b| {
        b.iter(|| nu_curve(&reference_model(0.0), &params(0.0), &grid, &sim(1000, 0, false), Coupling::Common).unwrap())
    });
    g.bench_function("euler_2000_steps", |b| {
        b.iter(|| nu_curve(&reference_model(1.0), &params(0.0), &grid, &sim(1000, 2000, true), Coupling::Common).unwrap())
    });
    g.finish();
}

fn property_suite(c: &mut Criterion) {
    let path = event_path(20.0);
    let alphas = [0.5, 2.0, 8.0, f64::INFINITY];
    let suite = PathSuite { params: params(1.2), x: 0.7, k: 0.0, l: 0.6, alphas: &alphas };
    c.bench_function("property_suite_one_path", |b| b.iter(|| run_path_suite(black_box(&path), &suite)));
}

criterion_group!(benches, exact_sweep, euler_walk, nu_curves, property_suite);
criterion_main!(benches);
