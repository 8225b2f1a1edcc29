use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use qnode_bench::{poisson_streams, stored_scenario};
use qnode_core::correlate::{coincidence_histogram, g2_cross, default_accidental_offsets};
use qnode_core::experiment::{run_tomography, Tier};
use qnode_core::fit::{decay_model, fit_exponential_decay};
use qnode_core::pipeline::{run_statistics, StatsPlan};
use qnode_core::state::werner_state;
use qnode_core::tomography::{default_settings, reconstruct_two_qubit, synthetic_counts};
use qnode_core::MzParams;

fn correlation(c: &mut Criterion) {
    let (a, b) = poisson_streams(1e5, 1.0, 1);
    c.bench_function("histogram 1e5 x 1e5 tags", |bench| {
        bench.iter(|| coincidence_histogram(black_box(&a), black_box(&b), 1e-9, (-2e-6, 2e-6)))
    });
    let offsets = default_accidental_offsets(0.0);
    c.bench_function("g2 cross 1e5 x 1e5 tags", |bench| {
        bench.iter(|| g2_cross(black_box(&a), black_box(&b), 400e-9, 0.0, &offsets))
    });
}

fn engine(c: &mut Criterion) {
    let sc = stored_scenario(1.0);
    let plan = StatsPlan::for_scenario(&sc);
    let mut group = c.benchmark_group("engine");
    group.sample_size(10);
    group.bench_function("one simulated second, stored", |bench| {
        bench.iter(|| run_statistics(black_box(&sc), 1, 1, &plan))
    });
    group.bench_function("tomography, four settings of one second", |bench| {
        bench.iter(|| run_tomography(black_box(&sc), Tier::Events, 1, 1))
    });
    group.finish();
}

fn analysis(c: &mut Criterion) {
    let mz = MzParams::default();
    let counts = synthetic_counts(
        &werner_state(0.8).unwrap(),
        &default_settings(),
        &mz,
        &mz,
        1e5,
    )
    .unwrap();
    c.bench_function("two-qubit reconstruction", |bench| {
        bench.iter(|| reconstruct_two_qubit(black_box(&counts)))
    });
    let taus: Vec<f64> = (1..=14).map(|k| 2e-6 * k as f64).collect();
    let etas: Vec<f64> = taus.iter().map(|&t| decay_model(t, 0.2, 27e-6)).collect();
    let sigmas: Vec<f64> = etas.iter().map(|e| 0.05 * e).collect();
    c.bench_function("decay fit, 14 points", |bench| {
        bench.iter(|| fit_exponential_decay(black_box(&taus), &etas, &sigmas))
    });
}

criterion_group!(benches, correlation, engine, analysis);
criterion_main!(benches);
