use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use flexshare::assignment::min_cost_matching;
use flexshare::engine::{run_strategy, Strategy};
use flexshare::scaling::{build_problem, solve};
use flexshare::scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matching(c: &mut Criterion) {
    let mut group = c.benchmark_group("min_cost_matching");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [4usize, 8, 16, 32] {
        let costs: Vec<Vec<Option<f64>>> = (0..n)
            .map(|_| (0..2 * n).map(|_| rng.random_bool(0.8).then(|| rng.random_range(0.0..100.0))).collect())
            .collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &costs, |b, costs| {
            b.iter(|| min_cost_matching(black_box(costs)))
        });
    }
    group.finish();
}

fn scaling(c: &mut Criterion) {
    let sc = scenario::bundled("synthetic").unwrap();
    let pop = sc.pop(None).unwrap();
    let report = run_strategy(&pop, &sc.request_order, Strategy::PerVnfFlexShare).unwrap();
    let problem = build_problem(&report.deployment, &pop);
    c.bench_function("joint_program/synthetic", |b| b.iter(|| solve(black_box(&problem))));
}

fn strategies(c: &mut Criterion) {
    let sc = scenario::bundled("synthetic").unwrap();
    let mut group = c.benchmark_group("run_strategy/synthetic");
    group.sample_size(10);
    for strategy in [Strategy::PerService, Strategy::PerVnfFlexShare, Strategy::PerVnfBrute, Strategy::PerFlowFlexShare] {
        let pop = sc.pop_at(1.4, None).unwrap();
        group.bench_function(strategy.name(), |b| b.iter(|| run_strategy(black_box(&pop), &sc.request_order, strategy)));
    }
    group.finish();
}

criterion_group!(benches, matching, scaling, strategies);
criterion_main!(benches);
