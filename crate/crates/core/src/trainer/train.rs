//! The sample, filter, update loop.

use std::io::Write;

use serde::Serialize;

use super::config::TrainConfig;
use super::env::{generate_task, ContextKey, MacroAction, Task};
use super::filter::{filter_batch, FilterConfig, GroupOutcome, Verdict};
use super::rollout::{sample_rollout, Rollout, RolloutLimits};
use super::table::PolicyTable;
use super::update::{update_policy, UpdateSettings};
use crate::error::Result;
use crate::grpo::{group_advantages, ClipConfig};
use crate::rng::{rollout_index, stream, Domain};
use crate::tir::jsonl::{HeaderLine, Record};
use crate::tir::stats::corpus_stats;

pub const METRICS_HEADER: &str = "step,mean_reward,groups_total,dropped_void,dropped_zero_adv,dropped_acc,exec_prob_buffered_ctx,delayed_rate";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    /// Over every sampled response of the step.
    pub mean_reward: f64,
    pub groups_total: usize,
    pub dropped_void: usize,
    pub dropped_zero_adv: usize,
    pub dropped_acc: usize,
    /// EXEC probability at [`ContextKey::BUFFERED_EVAL`] after the update.
    pub exec_prob_buffered_ctx: f64,
    /// Pooled over retained trajectories; `None` if they hold no code.
    pub delayed_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub metrics: Vec<StepMetrics>,
    pub policy: PolicyTable,
    pub trajectory_log: Vec<Record>,
}

impl TrainConfig {
    pub fn limits(&self) -> RolloutLimits {
        RolloutLimits {
            max_turns: self.max_turns,
            max_actions_per_turn: self.max_actions_per_turn,
        }
    }

    pub fn update_settings(&self) -> Result<UpdateSettings> {
        Ok(UpdateSettings {
            eta: self.eta,
            clip: ClipConfig::new(self.epsilon, self.lambda)?,
            inner_iterations: self.inner_iterations,
            correction: self.correction,
        })
    }

    fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            acc_filter_low: self.acc_filter_low,
            acc_filter_high: self.acc_filter_high,
        }
    }
}

struct SampledGroup {
    task: Task,
    rollouts: Vec<Rollout>,
}

fn sample_batch(policy: &PolicyTable, cfg: &TrainConfig, step: usize) -> Vec<SampledGroup> {
    (0..cfg.batch_prompts)
        .map(|b| {
            let task = generate_task(&mut stream(cfg.seed, Domain::Task, rollout_index(step, b, 0)));
            let rollouts = (0..cfg.group_size)
                .map(|m| {
                    let mut rng = stream(cfg.seed, Domain::Rollout, rollout_index(step, b, m));
                    sample_rollout(policy, &task, cfg.limits(), &mut rng)
                })
                .collect();
            SampledGroup { task, rollouts }
        })
        .collect()
}

fn log_batch(
    log: &mut Vec<Record>,
    step: usize,
    batch: &[SampledGroup],
    verdicts: &[Verdict],
) -> Result<()> {
    for (b, (group, verdict)) in batch.iter().zip(verdicts).enumerate() {
        let rewards: Vec<f64> = group.rollouts.iter().map(|r| r.reward).collect();
        let adv = group_advantages(&rewards)?;
        for (m, r) in group.rollouts.iter().enumerate() {
            let traj_id = format!("s{step:04}-p{b:03}-r{m:02}");
            log.push(Record {
                header: Some(HeaderLine {
                    traj_id: traj_id.clone(),
                    reward: r.reward,
                    advantage: adv.values().map(|v| v[m]),
                    retained: *verdict == Verdict::Retained,
                }),
                traj_id,
                steps: r.steps.clone(),
            });
        }
        debug_assert!(!group.task.expression.is_empty());
    }
    Ok(())
}

/// Trains from a uniform policy.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutput> {
    train_from(cfg, PolicyTable::new())
}

pub fn train_from(cfg: &TrainConfig, mut policy: PolicyTable) -> Result<TrainOutput> {
    cfg.validate()?;
    let settings = cfg.update_settings()?;
    let filter_cfg = cfg.filter_config();
    let mut metrics = Vec::with_capacity(cfg.steps);
    let mut trajectory_log = Vec::new();
    for step in 0..cfg.steps {
        let batch = sample_batch(&policy, cfg, step);
        let outcomes: Vec<GroupOutcome<'_>> = batch
            .iter()
            .map(|g| GroupOutcome {
                rewards: g.rollouts.iter().map(|r| r.reward).collect(),
                trajectories: g.rollouts.iter().map(|r| r.steps.as_slice()).collect(),
            })
            .collect();
        let report = filter_batch(&outcomes, &filter_cfg)?;
        let retained: Vec<&[Rollout]> = report
            .retained()
            .into_iter()
            .map(|i| batch[i].rollouts.as_slice())
            .collect();
        update_policy(&mut policy, &retained, &settings)?;

        let responses = cfg.batch_prompts * cfg.group_size;
        let reward_sum: f64 = batch.iter().flat_map(|g| &g.rollouts).map(|r| r.reward).sum();
        let stats = corpus_stats(retained.iter().flat_map(|g| g.iter()).map(|r| r.steps.as_slice()));
        metrics.push(StepMetrics {
            step,
            mean_reward: reward_sum / responses as f64,
            groups_total: batch.len(),
            dropped_void: report.dropped_void,
            dropped_zero_adv: report.dropped_zero_adv,
            dropped_acc: report.dropped_acc,
            exec_prob_buffered_ctx: policy.probs(&ContextKey::BUFFERED_EVAL)[MacroAction::Exec.index()],
            delayed_rate: stats.delayed_rate,
        });

        let last = step + 1 == cfg.steps;
        let periodic = cfg.trajectory_log_every > 0 && step % cfg.trajectory_log_every == 0;
        if last || periodic {
            log_batch(&mut trajectory_log, step, &batch, &report.verdicts)?;
        }
    }
    Ok(TrainOutput {
        metrics,
        policy,
        trajectory_log,
    })
}

/// Mean reward of `policy` on `tasks` evaluation tasks, one sampled rollout
/// each. Deterministic in `(seed, limits, policy)`.
pub fn evaluate_policy(policy: &PolicyTable, limits: RolloutLimits, seed: u64, tasks: usize) -> f64 {
    if tasks == 0 {
        return 0.0;
    }
    let total: f64 = (0..tasks)
        .map(|k| {
            let task = generate_task(&mut stream(seed, Domain::Eval, k as u64));
            let mut rng = stream(seed, Domain::Eval, (1 << 40) + k as u64);
            sample_rollout(policy, &task, limits, &mut rng).reward
        })
        .sum();
    total / tasks as f64
}

pub fn write_metrics_csv<W: Write>(metrics: &[StepMetrics], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for m in metrics {
        let delayed = m.delayed_rate.map(|d| d.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.step,
            m.mean_reward,
            m.groups_total,
            m.dropped_void,
            m.dropped_zero_adv,
            m.dropped_acc,
            m.exec_prob_buffered_ctx,
            delayed
        )?;
    }
    Ok(())
}
