//! Group filtering before the update.
//!
//! Rules are checked in order and a dropped group is counted under the first
//! rule it breaks: (1) some response has a void turn, (2) advantages are
//! degenerate, (3) accuracy lies outside `[acc_filter_low, acc_filter_high]`.

use serde::Serialize;

use crate::error::Result;
use crate::grpo::{group_advantages, Advantages};
use crate::tir::stats::has_void_turn;
use crate::tir::Step;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FilterConfig {
    pub acc_filter_low: f64,
    pub acc_filter_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Retained,
    VoidTurn,
    ZeroAdvantage,
    Accuracy,
}

/// One sampled group as the filter sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupOutcome<'a> {
    pub rewards: Vec<f64>,
    pub trajectories: Vec<&'a [Step]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterReport {
    pub verdicts: Vec<Verdict>,
    pub dropped_void: usize,
    pub dropped_zero_adv: usize,
    pub dropped_acc: usize,
}

impl FilterReport {
    pub fn retained(&self) -> Vec<usize> {
        self.verdicts
            .iter()
            .enumerate()
            .filter(|(_, v)| **v == Verdict::Retained)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn group_verdict(group: &GroupOutcome<'_>, cfg: &FilterConfig) -> Result<Verdict> {
    if group.trajectories.iter().any(|s| has_void_turn(s)) {
        return Ok(Verdict::VoidTurn);
    }
    if group_advantages(&group.rewards)? == Advantages::Degenerate {
        return Ok(Verdict::ZeroAdvantage);
    }
    let acc = group.rewards.iter().sum::<f64>() / group.rewards.len() as f64;
    if acc > cfg.acc_filter_high || acc < cfg.acc_filter_low {
        return Ok(Verdict::Accuracy);
    }
    Ok(Verdict::Retained)
}

pub fn filter_batch(groups: &[GroupOutcome<'_>], cfg: &FilterConfig) -> Result<FilterReport> {
    let mut report = FilterReport {
        verdicts: Vec::with_capacity(groups.len()),
        dropped_void: 0,
        dropped_zero_adv: 0,
        dropped_acc: 0,
    };
    for g in groups {
        let v = group_verdict(g, cfg)?;
        match v {
            Verdict::Retained => {}
            Verdict::VoidTurn => report.dropped_void += 1,
            Verdict::ZeroAdvantage => report.dropped_zero_adv += 1,
            Verdict::Accuracy => report.dropped_acc += 1,
        }
        report.verdicts.push(v);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tir::StepKind;

    const CFG: FilterConfig = FilterConfig {
        acc_filter_low: 0.05,
        acc_filter_high: 0.95,
    };

    fn steps(kinds: &[StepKind]) -> Vec<Step> {
        kinds
            .iter()
            .map(|&kind| Step {
                kind,
                content: String::new(),
                turn: 1,
            })
            .collect()
    }

    #[test]
    fn all_correct_is_dropped() {
        let answer = steps(&[StepKind::FinalAnswer]);
        let g = GroupOutcome {
            rewards: vec![1.0; 4],
            trajectories: vec![&answer; 4],
        };
        // degenerate as well; the earlier rule takes the count
        assert_eq!(group_verdict(&g, &CFG).unwrap(), Verdict::ZeroAdvantage);
        let g = GroupOutcome {
            rewards: vec![1.0; 20].into_iter().chain([0.0]).collect(),
            trajectories: vec![&answer; 21],
        };
        assert_eq!(group_verdict(&g, &CFG).unwrap(), Verdict::Accuracy);
    }

    #[test]
    fn void_turn_drops_regardless_of_rewards() {
        let answer = steps(&[StepKind::FinalAnswer]);
        let void = steps(&[StepKind::Text, StepKind::ExecSignal, StepKind::Observation]);
        let g = GroupOutcome {
            rewards: vec![1.0, 0.0],
            trajectories: vec![&answer, &void],
        };
        assert_eq!(group_verdict(&g, &CFG).unwrap(), Verdict::VoidTurn);
    }

    #[test]
    fn mixed_group_is_kept() {
        let answer = steps(&[StepKind::FinalAnswer]);
        let g = GroupOutcome {
            rewards: vec![1.0, 0.0],
            trajectories: vec![&answer, &answer],
        };
        let r = filter_batch(&[g], &CFG).unwrap();
        assert_eq!(r.retained(), vec![0]);
        assert_eq!(r.dropped_void + r.dropped_zero_adv + r.dropped_acc, 0);
    }
}
