use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mfe_bench::{random_game, transient_game};
use mfe_core::dp::{optimal_value, value_iterate};
use mfe_core::equilibrium::{self, Criterion as Payoff, SolverOptions};
use mfe_core::fixtures;
use mfe_core::total::{star_modify, total_value};
use mfe_core::{GlobalState, StateActionMeasure, StationaryPolicy};

fn dynamic_programming(c: &mut Criterion) {
    let mut group = c.benchmark_group("dp");
    for n in [5, 20, 60] {
        let g = random_game(1, 1, n, 3);
        let m = g.freeze(0, &StateActionMeasure::uniform(g.populations()));
        group.bench_with_input(BenchmarkId::new("value_iterate", n), &m, |b, m| {
            b.iter(|| value_iterate(black_box(m), 0.95, 1e-9, 1_000_000).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("optimal_value", n), &m, |b, m| {
            b.iter(|| optimal_value(black_box(m), 0.95, 1e-9, 1_000_000).unwrap())
        });
    }
    group.finish();
}

fn invariant_measures(c: &mut Criterion) {
    let mut group = c.benchmark_group("invariant_measure");
    for n in [5, 60, 120] {
        let g = random_game(2, 1, n, 2);
        let tau = StateActionMeasure::uniform(g.populations());
        let f = StationaryPolicy::uniform_for(g.population(0));
        group.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| mfe_core::population::invariant_measure(&g, 0, &f, &tau, None, 1e-10, 1_000_000).unwrap())
        });
    }
    group.finish();
}

fn total_payoff(c: &mut Criterion) {
    let g = transient_game(3, 10, 3);
    let m = star_modify(&g, 0).unwrap().freeze(&StateActionMeasure::uniform(g.populations()));
    c.bench_function("total_value/10", |b| b.iter(|| total_value(black_box(&m), 1e-9).unwrap()));
}

fn equilibria(c: &mut Criterion) {
    let mut group = c.benchmark_group("equilibrium");
    group.sample_size(20);
    let pair = fixtures::g3_pair(0.5);
    group.bench_function("stationary/g3_pair", |b| {
        b.iter(|| equilibrium::stationary_mfe(&pair, Payoff::Discounted { beta: 0.9 }, &SolverOptions::default()).unwrap())
    });
    let g = random_game(4, 2, 4, 2);
    group.bench_function("stationary/random_2x4", |b| {
        b.iter(|| equilibrium::stationary_mfe(&g, Payoff::Discounted { beta: 0.9 }, &SolverOptions::default()).unwrap())
    });
    let g3 = fixtures::g3();
    let mu0 = GlobalState::uniform(g3.populations());
    let opts = SolverOptions { horizon: Some(50), ..Default::default() };
    group.bench_function("markov/g3_T50", |b| {
        b.iter(|| equilibrium::markov_mfe(&g3, Payoff::Discounted { beta: 0.9 }, &mu0, &opts).unwrap())
    });
    group.finish();
}

criterion_group!(benches, dynamic_programming, invariant_measures, total_payoff, equilibria);
criterion_main!(benches);
