use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ensemble_bench::{harmonic_operator_setup, harmonic_spec, unit_to_origin};
use ensemble_core::qp::{build_qp, solve_box_qp};
use ensemble_core::{assemble, dpss, singular_system, synthesize_alpha, transition_matrices};

fn bm_dpss(c: &mut Criterion) {
    let mut group = c.benchmark_group("dpss");
    for n in [256usize, 1001, 2048] {
        let w = 2.0 / n as f64;
        group.bench_with_input(BenchmarkId::new("N", n), &n, |b, &n| b.iter(|| dpss(black_box(n), w, None).unwrap()));
    }
    group.finish();
}

fn bm_synthesis(c: &mut Criterion) {
    let mut group = c.benchmark_group("alpha synthesis");
    group.sample_size(10);
    for n in [201usize, 1001] {
        let spec = harmonic_spec(n);
        let (p0, pf) = unit_to_origin(n);
        group.bench_with_input(BenchmarkId::new("N", n), &n, |b, _| {
            b.iter(|| synthesize_alpha(&spec, &p0, &pf).unwrap())
        });
    }
    group.finish();
}

fn bm_operator(c: &mut Criterion) {
    let mut group = c.benchmark_group("assemble + svd");
    group.sample_size(10);
    for n in [32usize, 64, 128] {
        let (sys, grid) = harmonic_operator_setup(n, n);
        group.bench_with_input(BenchmarkId::new("grid", n), &n, |b, _| {
            b.iter(|| {
                let tt = transition_matrices(&sys, &grid, 1e-10).unwrap();
                let op = assemble(&sys, &grid, &tt).unwrap();
                singular_system(&op, 1e-12).unwrap()
            })
        });
    }
    group.finish();
}

fn bm_qp(c: &mut Criterion) {
    let mut group = c.benchmark_group("box qp");
    group.sample_size(10);
    for (label, t) in [("T=pi", PI), ("T=5pi", 5.0 * PI)] {
        let prob = build_qp(t, 51, 1.0, 1.0).unwrap();
        group.bench_function(label, |b| b.iter(|| solve_box_qp(black_box(&prob), 1e-10).unwrap()));
    }
    group.bench_function("build T=5pi", |b| b.iter(|| build_qp(black_box(5.0 * PI), 51, 1.0, 1.0).unwrap()));
    group.finish();
}

criterion_group!(benches, bm_dpss, bm_synthesis, bm_operator, bm_qp);
criterion_main!(benches);
