use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ctvio::estimator::{evaluate, jacobian, solve, LmConfig};
use ctvio::io::parse_events;
use ctvio_bench::{event_text, problem, scenario};
use nalgebra::DVector;

fn spline(c: &mut Criterion) {
    let sim = scenario(false, 2.0);
    let traj = &sim.trajectory;
    let (t0, t1) = traj.domain();
    let times: Vec<f64> = (0..1000).map(|i| t0 + (t1 - t0) * i as f64 / 1000.0).collect();
    c.bench_function("spline/pose_at x1000", |b| {
        b.iter(|| {
            for t in &times {
                black_box(traj.pose_at(*t).unwrap());
            }
        })
    });
    c.bench_function("spline/derivatives_at x1000", |b| {
        b.iter(|| {
            for t in &times {
                black_box(traj.derivatives_at(*t).unwrap());
            }
        })
    });
}

fn estimator(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimator");
    group.sample_size(10);
    let sim = scenario(false, 1.0);
    let p = problem(&sim);
    let zero = DVector::zeros(p.dim());
    group.bench_function("evaluate 1 s", |b| b.iter(|| black_box(evaluate(&p, &zero).unwrap())));
    group.bench_function("jacobian 1 s", |b| b.iter(|| black_box(jacobian(&p, &zero).unwrap())));
    group.bench_function("solve 1 s", |b| {
        b.iter_batched(|| p.clone(), |p| black_box(solve(&p, &LmConfig::default()).unwrap()), BatchSize::LargeInput)
    });
    group.finish();
}

fn parsing(c: &mut Criterion) {
    let text = event_text(100_000);
    let mut group = c.benchmark_group("io");
    group.sample_size(10);
    group.bench_function("parse 1e5 events", |b| b.iter(|| black_box(parse_events(&text).unwrap())));
    group.finish();
}

criterion_group!(benches, spline, estimator, parsing);
criterion_main!(benches);
