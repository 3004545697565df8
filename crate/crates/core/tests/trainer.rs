use ihgrpo_core::gradcheck::{central_difference, max_relative_error, FD_STEP};
use ihgrpo_core::grpo::{clipped_token_term, group_advantages, Advantages, ClipConfig};
use ihgrpo_core::numeric::{log_softmax, log_sum_exp};
use ihgrpo_core::ImplicitLogits;
use ihgrpo_core::rng::{stream, Domain};
use ihgrpo_core::tir::{Step, StepKind};
use ihgrpo_core::trainer::rollout::{context_key, inverse_cdf};
use ihgrpo_core::trainer::{
    filter_batch, generate_task, sample_rollout, train, update_policy, write_metrics_csv,
    ActionRecord, ContextKey, FilterConfig, GroupOutcome, MacroAction, PolicyTable, Rollout,
    TrainConfig, UpdateSettings, Verdict, ACTION_COUNT,
};
use ihgrpo_core::tir::Trajectory;
use rand::Rng;

fn key(turn: usize, last: Option<MacroAction>) -> ContextKey {
    ContextKey {
        turn_index: turn,
        buffer_nonempty: false,
        has_observation: false,
        last_action: last,
    }
}

fn rollout(actions: Vec<ActionRecord>, reward: f64) -> Rollout {
    Rollout {
        steps: vec![Step {
            kind: StepKind::FinalAnswer,
            content: String::new(),
            turn: 1,
        }],
        actions,
        answer: Some(String::new()),
        reward,
    }
}

/// Group objective times `G` with the stop-gradient quantities of the
/// correction (`s` and `γ`) frozen at `frozen`, written out from the scalar
/// building blocks.
fn frozen_objective(
    policy: &PolicyTable,
    batch: &[Rollout],
    cfg: &ClipConfig,
    frozen: &[Vec<(f64, f64)>],
) -> f64 {
    let rewards: Vec<f64> = batch.iter().map(|r| r.reward).collect();
    let Advantages::Normalized(adv) = group_advantages(&rewards).unwrap() else {
        panic!("degenerate");
    };
    let mut total = 0.0;
    for (i, r) in batch.iter().enumerate() {
        let mut sum = 0.0;
        for (t, a) in r.actions.iter().enumerate() {
            let row = policy.row(&a.key);
            let ratio = (log_softmax(&row)[a.action.index()] - a.log_prob).exp();
            let s = clipped_token_term(ratio, adv[i], cfg).unwrap();
            let (s0, gamma) = frozen[i][t];
            let indicator = if a.action == MacroAction::Exec { 0.0 } else { 1.0 };
            let c = (gamma - indicator) * log_sum_exp(&row[1..]);
            sum += s + cfg.lambda * s0 * c;
        }
        total += sum / r.actions.len() as f64;
    }
    total
}

#[test]
fn update_matches_finite_difference_ascent() {
    let k1 = key(1, None);
    let k2 = key(1, Some(MacroAction::WriteEvalCode));
    let mut old = PolicyTable::new();
    old.set_row(k1, [0.1, 0.4, -0.2, 0.0, 0.3, -0.1]);
    old.set_row(k2, [0.5, -0.3, 0.2, 0.1, -0.4, 0.0]);
    let mut current = old.clone();
    current.set_row(k1, [0.15, 0.35, -0.2, 0.05, 0.3, -0.1]);
    current.set_row(k2, [0.45, -0.3, 0.25, 0.1, -0.4, 0.05]);
    let rec = |k: ContextKey, a: MacroAction| ActionRecord {
        key: k,
        action: a,
        log_prob: old.log_probs(&k)[a.index()],
    };
    let batch = vec![
        rollout(vec![rec(k1, MacroAction::WriteEvalCode), rec(k2, MacroAction::Exec)], 1.0),
        rollout(vec![rec(k1, MacroAction::AnswerGuess)], 0.0),
    ];
    let clip = ClipConfig::new(0.2, 0.5).unwrap();
    let settings = UpdateSettings {
        eta: 0.05,
        clip,
        inner_iterations: 1,
        correction: true,
    };
    let mut updated = current.clone();
    update_policy(&mut updated, &[&batch], &settings).unwrap();

    // frozen s and γ from the pre-update policy
    let rewards = [1.0, 0.0];
    let adv = group_advantages(&rewards).unwrap();
    let adv = adv.values().unwrap();
    let frozen: Vec<Vec<(f64, f64)>> = batch
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.actions
                .iter()
                .map(|a| {
                    let row = current.row(&a.key);
                    let ratio = (log_softmax(&row)[a.action.index()] - a.log_prob).exp();
                    let gamma = ImplicitLogits::new(row.to_vec()).unwrap().gamma();
                    (clipped_token_term(ratio, adv[i], &clip).unwrap(), gamma)
                })
                .collect()
        })
        .collect();

    for k in [k1, k2] {
        let base = current.row(&k);
        let numerical = central_difference(&base, FD_STEP, |x| {
            let mut p = current.clone();
            p.set_row(k, x.try_into().unwrap());
            Ok(frozen_objective(&p, &batch, &clip, &frozen))
        })
        .unwrap();
        let analytical: Vec<f64> = updated
            .row(&k)
            .iter()
            .zip(&base)
            .map(|(after, before)| (after - before) / settings.eta)
            .collect();
        let err = max_relative_error(&analytical, &numerical);
        assert!(err <= 1e-6, "row {k:?}: {err:e}\n{analytical:?}\n{numerical:?}");
    }
}

#[test]
fn clipped_out_tokens_contribute_nothing() {
    let k1 = key(1, None);
    let k2 = key(2, None);
    let mut policy = PolicyTable::new();
    // ratio e^{0.5} > 1 + ε with positive advantage: constant branch
    let batch = vec![
        rollout(
            vec![ActionRecord {
                key: k1,
                action: MacroAction::Think,
                log_prob: policy.log_probs(&k1)[3] - 0.5,
            }],
            1.0,
        ),
        rollout(
            vec![ActionRecord {
                key: k2,
                action: MacroAction::Think,
                log_prob: policy.log_probs(&k2)[3],
            }],
            0.0,
        ),
    ];
    let settings = UpdateSettings {
        eta: 0.05,
        clip: ClipConfig::new(0.2, 0.0).unwrap(),
        inner_iterations: 1,
        correction: true,
    };
    update_policy(&mut policy, &[&batch], &settings).unwrap();
    assert_eq!(policy.row(&k1), [0.0; ACTION_COUNT]);
    assert_ne!(policy.row(&k2), [0.0; ACTION_COUNT]);
}

fn rule_oracle(rewards: &[f64], voids: &[bool], cfg: &FilterConfig) -> bool {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    !voids.iter().any(|&v| v)
        && std >= 1e-8
        && mean <= cfg.acc_filter_high
        && mean >= cfg.acc_filter_low
}

#[test]
fn filter_agrees_with_rule_oracle() {
    use StepKind::*;
    let mk = |kinds: &[(StepKind, usize)]| -> Vec<Step> {
        kinds
            .iter()
            .map(|&(kind, turn)| Step {
                kind,
                content: String::new(),
                turn,
            })
            .collect()
    };
    let clean = mk(&[(Code, 1), (ExecSignal, 1), (Observation, 1), (FinalAnswer, 2)]);
    let void = mk(&[(Text, 1), (ExecSignal, 1), (Observation, 1), (FinalAnswer, 2)]);
    let cfg = FilterConfig {
        acc_filter_low: 0.2,
        acc_filter_high: 0.8,
    };
    let mut rng = stream(11, Domain::Verify, 0);
    let mut groups = Vec::new();
    let mut expected = Vec::new();
    for _ in 0..500 {
        let g = rng.gen_range(2..=10);
        let rewards: Vec<f64> = (0..g).map(|_| f64::from(rng.gen_bool(0.6))).collect();
        let voids: Vec<bool> = (0..g).map(|_| rng.gen_bool(0.05)).collect();
        expected.push(rule_oracle(&rewards, &voids, &cfg));
        groups.push(GroupOutcome {
            rewards,
            trajectories: voids.iter().map(|&v| if v { void.as_slice() } else { clean.as_slice() }).collect(),
        });
    }
    let report = filter_batch(&groups, &cfg).unwrap();
    let kept: Vec<bool> = report.verdicts.iter().map(|v| *v == Verdict::Retained).collect();
    assert_eq!(kept, expected);
    assert!(expected.iter().any(|&k| k) && expected.iter().any(|&k| !k));
    assert_eq!(
        report.dropped_void + report.dropped_zero_adv + report.dropped_acc,
        kept.iter().filter(|&&k| !k).count()
    );
}

#[test]
fn uniform_first_action_frequencies() {
    let policy = PolicyTable::new();
    let task = generate_task(&mut stream(2, Domain::Task, 0));
    let limits = TrainConfig::default().limits();
    let n = 100_000;
    let mut counts = [0usize; ACTION_COUNT];
    for k in 0..n {
        let r = sample_rollout(&policy, &task, limits, &mut stream(2, Domain::Rollout, k));
        counts[r.actions[0].action.index()] += 1;
    }
    let p = 1.0 / ACTION_COUNT as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    for c in counts {
        let f = c as f64 / n as f64;
        assert!((f - p).abs() < 3.0 * se, "{f} vs {p}");
    }
}

#[test]
fn context_keys_follow_the_prefix() {
    let task = generate_task(&mut stream(3, Domain::Task, 0));
    let mut traj = Trajectory::new(5);
    assert_eq!(context_key(&traj, None), key(1, None));
    traj.append_step(StepKind::Code, format!("emit {}", task.expression)).unwrap();
    assert_eq!(
        context_key(&traj, Some(MacroAction::WriteEvalCode)),
        ContextKey::BUFFERED_EVAL
    );
    traj.trigger_execution().unwrap();
    let k = context_key(&traj, Some(MacroAction::Exec));
    assert_eq!(k.turn_index, 2);
    assert!(k.has_observation && !k.buffer_nonempty);
    assert_eq!(inverse_cdf(&[1.0, 0.0], 0.3), 0);
}

fn metrics_csv(cfg: &TrainConfig) -> String {
    let mut buf = Vec::new();
    write_metrics_csv(&train(cfg).unwrap().metrics, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn zero_lambda_equals_correction_disabled() {
    let base = TrainConfig {
        steps: 40,
        batch_prompts: 8,
        lambda: 0.0,
        ..TrainConfig::default()
    };
    let disabled = TrainConfig {
        correction: false,
        ..base.clone()
    };
    assert_eq!(metrics_csv(&base), metrics_csv(&disabled));
    let with_lambda = TrainConfig {
        lambda: 0.5,
        ..base.clone()
    };
    assert_ne!(metrics_csv(&base), metrics_csv(&with_lambda));
}

#[test]
fn multiple_inner_iterations_still_learn() {
    let cfg = TrainConfig {
        steps: 60,
        inner_iterations: 3,
        ..TrainConfig::default()
    };
    let out = train(&cfg).unwrap();
    let first = out.metrics[0].mean_reward;
    let last = out.metrics.last().unwrap().mean_reward;
    assert!(last > first, "{first} -> {last}");
}
