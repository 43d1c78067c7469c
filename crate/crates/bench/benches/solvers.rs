use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use marc_bench::{power_gains, sweep_midpoint};
use marc_core::fading::sample_unit_ensemble;
use marc_core::oracle::{grid_best_sum_rate, GridSpec};
use marc_core::wfsolve::{waterfill_mac_opportunistic, waterfill_single};
use marc_core::{optimal_cutset_sum_rate, optimal_df_sum_rate, Budget, Receiver, SolverConfig, Transmitter};

fn waterfilling(c: &mut Criterion) {
    let cfg = SolverConfig::default();
    let mut group = c.benchmark_group("waterfill");
    for n in [1_000, 20_000] {
        let (ens, budget) = sweep_midpoint(n);
        let single = power_gains(&ens, Receiver::Destination, Transmitter::Relay);
        let mac: Vec<Vec<f64>> = (0..2)
            .map(|u| power_gains(&ens, Receiver::Relay, Transmitter::Source(u)))
            .collect();
        group.bench_with_input(BenchmarkId::new("single", n), &single, |b, g| {
            b.iter(|| waterfill_single(black_box(g), 0.5, 10.0).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("mac_opportunistic", n), &mac, |b, g| {
            b.iter(|| waterfill_mac_opportunistic(black_box(g), budget.theta, budget.sources(), &cfg).unwrap())
        });
    }
    group.finish();
}

fn sum_rates(c: &mut Criterion) {
    let cfg = SolverConfig::default();
    let mut group = c.benchmark_group("sum_rate");
    group.sample_size(10);
    for n in [200, 2_000] {
        let (ens, budget) = sweep_midpoint(n);
        group.bench_with_input(BenchmarkId::new("df", n), &ens, |b, e| {
            b.iter(|| optimal_df_sum_rate(black_box(e), &budget, &cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("cutset", n), &ens, |b, e| {
            b.iter(|| optimal_cutset_sum_rate(black_box(e), &budget, &cfg).unwrap())
        });
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let ens = sample_unit_ensemble(2, 2, 1).unwrap();
    let budget = Budget::new(vec![1.0; 3], 0.5).unwrap();
    let grid = GridSpec::with_step_fraction(2, 0.05);
    let mut group = c.benchmark_group("oracle");
    group.sample_size(10);
    group.bench_function("grid_n2", |b| {
        b.iter(|| grid_best_sum_rate(black_box(&ens), &budget, grid).unwrap())
    });
    group.finish();
}

criterion_group!(benches, waterfilling, sum_rates, oracle);
criterion_main!(benches);
