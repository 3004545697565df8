//! Sampling trajectories from the tabular policy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::env::{ContextKey, MacroAction, Task, GUESS_ANSWER};
use super::table::PolicyTable;
use crate::grpo::reward_correct;
use crate::tir::{Step, StepKind, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RolloutLimits {
    pub max_turns: usize,
    pub max_actions_per_turn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub key: ContextKey,
    pub action: MacroAction,
    /// Log-probability under the sampling policy.
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub steps: Vec<Step>,
    pub actions: Vec<ActionRecord>,
    pub answer: Option<String>,
    pub reward: f64,
}

/// Index of the first action whose cumulative probability exceeds `u`.
pub fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub fn context_key(traj: &Trajectory, last_action: Option<MacroAction>) -> ContextKey {
    ContextKey {
        turn_index: traj.current_turn(),
        buffer_nonempty: !traj.buffer().is_empty(),
        has_observation: traj.last_observation().is_some_and(|o| !o.is_empty()),
        last_action,
    }
}

/// Expands one macro-action into trajectory steps.
pub fn apply_action(traj: &mut Trajectory, task: &Task, action: MacroAction) {
    let res = match action {
        MacroAction::Exec => traj.trigger_execution().map(|_| ()),
        MacroAction::WriteEvalCode => {
            traj.append_step(StepKind::Code, format!("emit {}", task.expression))
        }
        MacroAction::WritePartialCode => {
            traj.append_step(StepKind::Code, format!("v = {}", task.operands[0]))
        }
        MacroAction::Think => {
            traj.append_step(StepKind::Text, format!("Need the value of {}.", task.expression))
        }
        MacroAction::AnswerFromObs => {
            let obs = traj.last_observation().unwrap_or("").to_string();
            traj.append_step(StepKind::FinalAnswer, obs)
        }
        MacroAction::AnswerGuess => traj.append_step(StepKind::FinalAnswer, GUESS_ANSWER),
    };
    res.expect("actions are only applied to open trajectories");
}

/// Samples actions until a final answer or the turn budget ends the
/// trajectory. A turn that reaches `max_actions_per_turn` actions without an
/// execution signal is closed; its buffered code carries over. Unanswered
/// trajectories score 0.
pub fn sample_rollout<R: Rng + ?Sized>(
    policy: &PolicyTable,
    task: &Task,
    limits: RolloutLimits,
    rng: &mut R,
) -> Rollout {
    let mut traj = Trajectory::new(limits.max_turns);
    let mut actions = Vec::new();
    let mut last = None;
    let mut in_turn = 0;
    while traj.is_open() {
        let key = context_key(&traj, last);
        let log_probs = policy.log_probs(&key);
        let probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
        let idx = inverse_cdf(&probs, rng.gen::<f64>());
        let action = MacroAction::from_index(idx).expect("row length matches the vocabulary");
        actions.push(ActionRecord {
            key,
            action,
            log_prob: log_probs[idx],
        });
        let turn = traj.current_turn();
        apply_action(&mut traj, task, action);
        last = Some(action);
        if traj.current_turn() != turn {
            in_turn = 0;
        } else {
            in_turn += 1;
            if in_turn >= limits.max_actions_per_turn && traj.is_open() {
                traj.close_turn().expect("trajectory is open");
                in_turn = 0;
            }
        }
    }
    let answer = traj.final_answer().map(str::to_string);
    let reward = answer
        .as_deref()
        .map_or(0.0, |a| reward_correct(a, &task.truth.to_string()));
    Rollout {
        steps: traj.into_steps(),
        actions,
        answer,
        reward,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use crate::trainer::env::generate_task;

    const LIMITS: RolloutLimits = RolloutLimits {
        max_turns: 5,
        max_actions_per_turn: 4,
    };

    fn forcing(plan: &[(Option<MacroAction>, MacroAction)]) -> impl Fn(&ContextKey) -> Option<MacroAction> + '_ {
        move |key| plan.iter().find(|(l, _)| *l == key.last_action).map(|p| p.1)
    }

    /// Table whose rows saturate on the planned action for every context the
    /// plan visits.
    fn saturated(task: &Task, plan: &[(Option<MacroAction>, MacroAction)]) -> PolicyTable {
        let pick = forcing(plan);
        let mut table = PolicyTable::new();
        let mut traj = Trajectory::new(LIMITS.max_turns);
        let mut last = None;
        while traj.is_open() {
            let key = context_key(&traj, last);
            let a = pick(&key).unwrap();
            table.row_mut(key)[a.index()] = 50.0;
            apply_action(&mut traj, task, a);
            last = Some(a);
        }
        table
    }

    #[test]
    fn optimal_plan_always_scores() {
        use MacroAction::*;
        let plan = [(None, WriteEvalCode), (Some(WriteEvalCode), Exec), (Some(Exec), AnswerFromObs)];
        let mut rng = stream(3, Domain::Task, 0);
        for k in 0..50 {
            let task = generate_task(&mut rng);
            let table = saturated(&task, &plan);
            let r = sample_rollout(&table, &task, LIMITS, &mut stream(3, Domain::Rollout, k));
            let acts: Vec<_> = r.actions.iter().map(|a| a.action).collect();
            assert_eq!(acts, vec![WriteEvalCode, Exec, AnswerFromObs]);
            assert_eq!(r.reward, 1.0);
            assert_eq!(r.answer, Some(task.truth.to_string()));
        }
    }

    #[test]
    fn guess_never_scores() {
        let mut rng = stream(4, Domain::Task, 0);
        let task = generate_task(&mut rng);
        let table = saturated(&task, &[(None, MacroAction::AnswerGuess)]);
        let r = sample_rollout(&table, &task, LIMITS, &mut rng);
        assert_eq!(r.reward, 0.0);
        assert_eq!(r.steps.len(), 1);
    }

    #[test]
    fn uniform_rollouts_are_reproducible_and_bounded() {
        let table = PolicyTable::new();
        for k in 0..200 {
            let task = generate_task(&mut stream(5, Domain::Task, k));
            let a = sample_rollout(&table, &task, LIMITS, &mut stream(5, Domain::Rollout, k));
            let b = sample_rollout(&table, &task, LIMITS, &mut stream(5, Domain::Rollout, k));
            assert_eq!(a, b);
            assert!(a.steps.iter().all(|s| s.turn <= LIMITS.max_turns));
            assert!(crate::tir::trajectory::validate_steps(&a.steps).is_ok());
            assert!(a.actions.len() <= LIMITS.max_turns * LIMITS.max_actions_per_turn);
        }
    }

    #[test]
    fn inverse_cdf_edges() {
        assert_eq!(inverse_cdf(&[0.5, 0.5], 0.0), 0);
        assert_eq!(inverse_cdf(&[0.5, 0.5], 0.5), 1);
        assert_eq!(inverse_cdf(&[0.5, 0.5], 0.999_999), 1);
        assert_eq!(inverse_cdf(&[0.0, 1.0], 0.0), 1);
    }

    #[test]
    fn empirical_frequencies_match_softmax() {
        let probs = crate::numeric::softmax(&[0.3, -1.0, 0.8, 0.0, 1.5, -0.4]);
        let mut rng = stream(6, Domain::Eval, 0);
        let n = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[inverse_cdf(&probs, rng.gen::<f64>())] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let freq = *c as f64 / n as f64;
            assert!((freq - p).abs() < 3.0 * se, "freq {freq} vs p {p}");
        }
    }
}
