use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use esaic_core::{
    centralized_q_learning, compute_values, kmedian_1d, value_iteration, GridSpec, PeerDistribution, Rendezvous,
    TrainConfig, UpdateRule, ValueOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kmedian(c: &mut Criterion) {
    let mut group = c.benchmark_group("kmedian_1d");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [64usize, 256, 1024] {
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        for k in [2usize, 8] {
            group.bench_with_input(BenchmarkId::new(format!("k{k}"), n), &values, |b, v| {
                b.iter(|| kmedian_1d(black_box(v), k).unwrap())
            });
        }
    }
    group.finish();
}

fn centralized(c: &mut Criterion) {
    let mut group = c.benchmark_group("centralized_q_learning");
    group.sample_size(10);
    for side in [3usize, 4] {
        let mdp = Rendezvous::new(GridSpec::rendezvous(side), 2).unwrap();
        let cfg = TrainConfig::new(0.9, 20_000, 1, UpdateRule::Standard);
        group.bench_function(BenchmarkId::new("2 agents, 20k episodes", side), |b| {
            b.iter(|| centralized_q_learning(&mdp, &cfg).unwrap())
        });
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let mut group = c.benchmark_group("value_iteration");
    group.sample_size(10);
    for (side, n) in [(3usize, 2usize), (3, 3), (6, 2)] {
        let mdp = Rendezvous::new(GridSpec::rendezvous(side), n).unwrap();
        group.bench_function(BenchmarkId::new(format!("{n} agents"), side), |b| {
            b.iter(|| value_iteration(&mdp, 0.9, 1e-12).unwrap())
        });
    }
    group.finish();
}

fn values(c: &mut Criterion) {
    let mdp = Rendezvous::new(GridSpec::rendezvous(4), 2).unwrap();
    let exact = value_iteration(&mdp, 0.9, 1e-12).unwrap();
    let dist = PeerDistribution::uniform_non_goal(&mdp, 1);
    let opts = ValueOptions::default();
    c.bench_function("compute_values 4x4", |b| {
        b.iter(|| compute_values(&mdp, &exact.q_star, &exact.policy, &dist, 0, &opts).unwrap())
    });
}

criterion_group!(benches, kmedian, centralized, oracle, values);
criterion_main!(benches);
