use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ihgrpo_core::grpo::{ih_grpo_objective, ClipConfig, Response, RolloutGroup, TokenLogits, TokenRecord};
use ihgrpo_core::numeric::{log_softmax, log_sum_exp};
use ihgrpo_core::rng::{stream, Domain};
use ihgrpo_core::surrogate::{one_step_pair_update, surrogate_gradient};
use ihgrpo_core::tir::sandbox::{sandbox_execute, SandboxState};
use ihgrpo_core::trainer::{generate_task, sample_rollout, train, PolicyTable, TrainConfig};
use ihgrpo_core::{FMode, ImplicitLogits, UpdateConfig};
use rand::Rng;
use std::hint::black_box;

fn logits(v: usize) -> Vec<f64> {
    let mut rng = stream(1, Domain::Verify, v as u64);
    (0..=v).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

fn numeric(c: &mut Criterion) {
    let mut g = c.benchmark_group("log_sum_exp");
    for v in [8, 64, 1024] {
        let x = logits(v);
        g.bench_with_input(BenchmarkId::from_parameter(v), &x, |b, x| b.iter(|| log_sum_exp(black_box(x))));
    }
    g.finish();
}

fn surrogate(c: &mut Criterion) {
    let mut g = c.benchmark_group("surrogate");
    for v in [8, 64] {
        let beta = ImplicitLogits::new(logits(v)).unwrap();
        let cfg = UpdateConfig::new(0.05, 1.5, 1, FMode::Exact).unwrap();
        g.bench_with_input(BenchmarkId::new("gradient", v), &beta, |b, beta| {
            b.iter(|| surrogate_gradient(black_box(beta), &cfg).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("pair_update", v), &beta, |b, beta| {
            b.iter(|| one_step_pair_update(black_box(beta), &cfg).unwrap())
        });
    }
    g.finish();
}

fn objective(c: &mut Criterion) {
    let (g, len, v) = (8, 16, 32);
    let row = logits(v);
    let lp = log_softmax(&row);
    let responses = (0..g)
        .map(|i| Response {
            tokens: (0..len)
                .map(|t| TokenRecord {
                    token: (i + t) % (v + 1),
                    old_log_prob: lp[(i + t) % (v + 1)] + 0.05,
                    masked: false,
                })
                .collect(),
        })
        .collect();
    let rewards = (0..g).map(|i| (i % 2) as f64).collect();
    let group = RolloutGroup::new(responses, rewards).unwrap();
    let tl = TokenLogits {
        logits: vec![vec![row; len]; g],
    };
    let cfg = ClipConfig::default();
    c.bench_function("ih_grpo_objective/G8xT16xV32", |b| {
        b.iter(|| ih_grpo_objective(black_box(&group), &tl, &cfg).unwrap())
    });
}

fn runtime(c: &mut Criterion) {
    let program = "a = 12 + 34\nb = a * 56 - 7\nemit b\nemit (a + b) / 3 % 11";
    c.bench_function("sandbox_execute", |b| {
        b.iter(|| sandbox_execute(&mut SandboxState::default(), black_box(program)).unwrap())
    });
    let policy = PolicyTable::new();
    let limits = TrainConfig::default().limits();
    let task = generate_task(&mut stream(1, Domain::Task, 0));
    let mut k = 0u64;
    c.bench_function("sample_rollout/uniform", |b| {
        b.iter(|| {
            k += 1;
            sample_rollout(&policy, &task, limits, &mut stream(1, Domain::Rollout, k))
        })
    });
}

fn training(c: &mut Criterion) {
    let cfg = TrainConfig {
        steps: 10,
        ..TrainConfig::default()
    };
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("10_steps", |b| b.iter(|| train(black_box(&cfg)).unwrap()));
    g.finish();
}

criterion_group!(benches, numeric, surrogate, objective, runtime, training);
criterion_main!(benches);
