//! Gradient ascent on the IH-GRPO objective over the retained groups.
//!
//! The batch objective is `Σ_groups G·J_group`: each group's objective
//! scaled back from a mean over its responses to a sum, so a single one-token
//! response with `ρ = 1` moves its row by exactly `η·A·(onehot − softmax)`.

use std::collections::BTreeMap;

use super::env::{ContextKey, ACTION_COUNT};
use super::rollout::Rollout;
use super::table::PolicyTable;
use crate::error::{Error, Result};
use crate::grpo::{
    ih_grpo_objective, ih_grpo_objective_uncorrected, ClipConfig, Response, RolloutGroup,
    TokenLogits, TokenRecord,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateSettings {
    pub eta: f64,
    pub clip: ClipConfig,
    pub inner_iterations: usize,
    /// `false` skips the correction branch entirely.
    pub correction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    /// Batch objective before each inner iteration's step.
    pub objectives: Vec<f64>,
    pub rows_touched: usize,
}

pub type RowGradients = BTreeMap<ContextKey, [f64; ACTION_COUNT]>;

/// Turns sampled rollouts into a scored group. Old log-probabilities are
/// the ones recorded at sampling time.
pub fn build_group(rollouts: &[Rollout]) -> Result<RolloutGroup> {
    let responses = rollouts
        .iter()
        .map(|r| Response {
            tokens: r
                .actions
                .iter()
                .map(|a| TokenRecord {
                    token: a.action.index(),
                    old_log_prob: a.log_prob,
                    masked: false,
                })
                .collect(),
        })
        .collect();
    RolloutGroup::new(responses, rollouts.iter().map(|r| r.reward).collect())
}

/// Batch objective and its gradient per visited row under `policy`.
pub fn batch_objective(
    policy: &PolicyTable,
    groups: &[(&[Rollout], RolloutGroup)],
    settings: &UpdateSettings,
) -> Result<(f64, RowGradients)> {
    let mut value = 0.0;
    let mut grads = RowGradients::new();
    for (rollouts, group) in groups {
        let logits = TokenLogits {
            logits: rollouts
                .iter()
                .map(|r| r.actions.iter().map(|a| policy.row(&a.key).to_vec()).collect())
                .collect(),
        };
        let eval = if settings.correction {
            ih_grpo_objective(group, &logits, &settings.clip)?
        } else {
            ih_grpo_objective_uncorrected(group, &logits, &settings.clip)?
        };
        let g = group.size() as f64;
        value += g * eval.value;
        for (r, resp_grads) in rollouts.iter().zip(&eval.grads) {
            for (a, grad) in r.actions.iter().zip(resp_grads) {
                let acc = grads.entry(a.key).or_insert([0.0; ACTION_COUNT]);
                for (x, d) in acc.iter_mut().zip(grad) {
                    *x += g * d;
                }
            }
        }
    }
    Ok((value, grads))
}

/// Runs `inner_iterations` ascent steps on the retained groups. An empty
/// batch leaves the policy untouched.
pub fn update_policy(
    policy: &mut PolicyTable,
    retained: &[&[Rollout]],
    settings: &UpdateSettings,
) -> Result<UpdateOutcome> {
    if !(settings.eta > 0.0 && settings.eta.is_finite()) {
        return Err(Error::InvalidInput(format!("eta must be positive, got {}", settings.eta)));
    }
    let groups = retained
        .iter()
        .map(|r| Ok((*r, build_group(r)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut outcome = UpdateOutcome {
        objectives: Vec::new(),
        rows_touched: 0,
    };
    if groups.is_empty() {
        return Ok(outcome);
    }
    for _ in 0..settings.inner_iterations {
        let (value, grads) = batch_objective(policy, &groups, settings)?;
        outcome.objectives.push(value);
        outcome.rows_touched = outcome.rows_touched.max(grads.len());
        for (key, g) in grads {
            let row = policy.row_mut(key);
            for (x, d) in row.iter_mut().zip(g) {
                *x += settings.eta * d;
            }
        }
    }
    Ok(outcome)
}
