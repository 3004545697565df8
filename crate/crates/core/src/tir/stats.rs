//! Turn classification and tool-usage statistics.
//!
//! A code block is *delayed* when at least one step other than its execution
//! signal comes between it and that signal. Blocks that never reach an
//! execution signal also count as delayed: they were not executed in the step
//! right after they were written.

use serde::Serialize;

use super::trajectory::{Step, StepKind};

pub const POSITION_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TurnKind {
    Void,
    ToolTurn,
    AnswerTurn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub index: usize,
    pub steps: Vec<Step>,
    /// Code blocks run by execution signals inside this turn, including
    /// blocks written in earlier turns.
    pub executed_blocks: usize,
}

impl Turn {
    /// Builds a turn on its own, assuming the code buffer is empty when it
    /// starts.
    pub fn from_steps(index: usize, steps: Vec<Step>) -> Self {
        let mut executed = 0;
        let mut pending = 0;
        for s in &steps {
            match s.kind {
                StepKind::Code => pending += 1,
                StepKind::ExecSignal => {
                    executed += pending;
                    pending = 0;
                }
                _ => {}
            }
        }
        Self {
            index,
            steps,
            executed_blocks: executed,
        }
    }
}

/// Splits a step sequence into turns by the steps' turn numbers, carrying
/// buffered code across turn boundaries.
pub fn split_turns(steps: &[Step]) -> Vec<Turn> {
    let mut turns: Vec<Turn> = Vec::new();
    let mut pending = 0;
    for s in steps {
        if turns.last().is_none_or(|t| t.index != s.turn) {
            turns.push(Turn {
                index: s.turn,
                steps: Vec::new(),
                executed_blocks: 0,
            });
        }
        let turn = turns.last_mut().expect("pushed above");
        match s.kind {
            StepKind::Code => pending += 1,
            StepKind::ExecSignal => {
                turn.executed_blocks += pending;
                pending = 0;
            }
            _ => {}
        }
        turn.steps.push(s.clone());
    }
    turns
}

pub fn classify_turn(turn: &Turn) -> TurnKind {
    if turn.steps.iter().any(|s| s.kind == StepKind::FinalAnswer) {
        TurnKind::AnswerTurn
    } else if turn.executed_blocks > 0 {
        TurnKind::ToolTurn
    } else {
        TurnKind::Void
    }
}

pub fn has_void_turn(steps: &[Step]) -> bool {
    split_turns(steps)
        .iter()
        .any(|t| classify_turn(t) == TurnKind::Void)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryStats {
    /// Execution signals that ran at least one block.
    pub exec_count: usize,
    pub code_block_count: usize,
    pub delayed_blocks: usize,
    /// `None` when the trajectory has no code blocks.
    pub delayed_rate: Option<f64>,
    pub void_turns: usize,
    pub turn_count: usize,
    /// Step offset of each code block divided by the step count.
    pub tool_positions: Vec<f64>,
}

pub fn trajectory_stats(steps: &[Step]) -> TrajectoryStats {
    let n = steps.len();
    let mut exec_count = 0;
    let mut code_block_count = 0;
    let mut delayed_blocks = 0;
    let mut tool_positions = Vec::new();
    // index of each buffered block's Code step
    let mut pending: Vec<usize> = Vec::new();
    for (k, s) in steps.iter().enumerate() {
        match s.kind {
            StepKind::Code => {
                code_block_count += 1;
                tool_positions.push(k as f64 / n as f64);
                pending.push(k);
            }
            StepKind::ExecSignal => {
                if !pending.is_empty() {
                    exec_count += 1;
                }
                delayed_blocks += pending.iter().filter(|&&at| at + 1 != k).count();
                pending.clear();
            }
            _ => {}
        }
    }
    delayed_blocks += pending.len();
    let turns = split_turns(steps);
    let void_turns = turns
        .iter()
        .filter(|t| classify_turn(t) == TurnKind::Void)
        .count();
    TrajectoryStats {
        exec_count,
        code_block_count,
        delayed_blocks,
        delayed_rate: (code_block_count > 0)
            .then(|| delayed_blocks as f64 / code_block_count as f64),
        void_turns,
        turn_count: turns.len(),
        tool_positions,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub trajectories: usize,
    pub code_blocks: usize,
    pub delayed_blocks: usize,
    /// Pooled over all code blocks in the corpus.
    pub delayed_rate: Option<f64>,
    pub mean_executions: Option<f64>,
    pub void_turn_fraction: Option<f64>,
    pub position_histogram: [usize; POSITION_BINS],
}

impl CorpusStats {
    fn empty() -> Self {
        Self {
            trajectories: 0,
            code_blocks: 0,
            delayed_blocks: 0,
            delayed_rate: None,
            mean_executions: None,
            void_turn_fraction: None,
            position_histogram: [0; POSITION_BINS],
        }
    }
}

pub fn position_bin(position: f64) -> usize {
    ((position * POSITION_BINS as f64) as usize).min(POSITION_BINS - 1)
}

/// Folds per-trajectory statistics in input order.
pub fn corpus_stats<'a, I>(trajectories: I) -> CorpusStats
where
    I: IntoIterator<Item = &'a [Step]>,
{
    let mut out = CorpusStats::empty();
    let mut executions = 0;
    let mut turns = 0;
    let mut void_turns = 0;
    for steps in trajectories {
        let st = trajectory_stats(steps);
        out.trajectories += 1;
        out.code_blocks += st.code_block_count;
        out.delayed_blocks += st.delayed_blocks;
        executions += st.exec_count;
        turns += st.turn_count;
        void_turns += st.void_turns;
        for p in st.tool_positions {
            out.position_histogram[position_bin(p)] += 1;
        }
    }
    if out.trajectories > 0 {
        out.mean_executions = Some(executions as f64 / out.trajectories as f64);
    }
    if out.code_blocks > 0 {
        out.delayed_rate = Some(out.delayed_blocks as f64 / out.code_blocks as f64);
    }
    if turns > 0 {
        out.void_turn_fraction = Some(void_turns as f64 / turns as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steps(kinds: &[(StepKind, usize)]) -> Vec<Step> {
        kinds
            .iter()
            .map(|&(kind, turn)| Step {
                kind,
                content: String::new(),
                turn,
            })
            .collect()
    }

    use StepKind::*;

    #[test]
    fn turn_classes() {
        let t = Turn::from_steps(1, steps(&[(Text, 1), (ExecSignal, 1), (Observation, 1)]));
        assert_eq!(classify_turn(&t), TurnKind::Void);
        let t = Turn::from_steps(
            1,
            steps(&[(Text, 1), (Code, 1), (ExecSignal, 1), (Observation, 1)]),
        );
        assert_eq!(classify_turn(&t), TurnKind::ToolTurn);
        let t = Turn::from_steps(1, steps(&[(Text, 1), (FinalAnswer, 1)]));
        assert_eq!(classify_turn(&t), TurnKind::AnswerTurn);
    }

    #[test]
    fn buffered_code_carries_into_next_turn() {
        let s = steps(&[(Code, 1), (Text, 1), (ExecSignal, 2), (Observation, 2)]);
        let turns = split_turns(&s);
        assert_eq!(classify_turn(&turns[0]), TurnKind::Void);
        assert_eq!(classify_turn(&turns[1]), TurnKind::ToolTurn);
    }

    #[test]
    fn delay_counting() {
        let st = trajectory_stats(&steps(&[(Code, 1), (ExecSignal, 1), (Observation, 1)]));
        assert_eq!(st.delayed_rate, Some(0.0));
        assert_eq!(st.exec_count, 1);

        let st = trajectory_stats(&steps(&[
            (Code, 1),
            (Text, 1),
            (Code, 1),
            (ExecSignal, 1),
            (Observation, 1),
        ]));
        assert_eq!(st.code_block_count, 2);
        assert_eq!(st.delayed_blocks, 1);
        assert_eq!(st.delayed_rate, Some(0.5));
        assert_eq!(st.tool_positions, vec![0.0, 0.4]);

        let st = trajectory_stats(&steps(&[(Text, 1), (FinalAnswer, 1)]));
        assert_eq!(st.delayed_rate, None);

        let st = trajectory_stats(&steps(&[(Code, 1), (FinalAnswer, 1)]));
        assert_eq!(st.delayed_rate, Some(1.0));
        assert_eq!(st.exec_count, 0);
    }

    #[test]
    fn empty_corpus_is_absent() {
        let c = corpus_stats(std::iter::empty());
        assert_eq!(c.trajectories, 0);
        assert_eq!(c.delayed_rate, None);
        assert_eq!(c.mean_executions, None);
        assert_eq!(c.void_turn_fraction, None);
    }

    #[test]
    fn bins() {
        assert_eq!(position_bin(0.0), 0);
        assert_eq!(position_bin(0.95), 9);
        assert_eq!(position_bin(1.0), 9);
        assert_eq!(position_bin(0.1), 1);
    }
}
