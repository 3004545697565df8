//! Synthetic arithmetic tasks and the macro-action vocabulary.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tir::sandbox::evaluate_expression;

/// Answer given by [`MacroAction::AnswerGuess`]. Tasks never evaluate to it.
pub const GUESS_ANSWER: &str = "0";

pub const OPERATORS: [char; 3] = ['+', '-', '*'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub expression: String,
    pub truth: i64,
    pub operands: Vec<i64>,
    pub operators: Vec<char>,
}

/// Draws 2 to 4 operands in `[10, 999]` joined by `+`, `-` or `*`. The
/// running left part is parenthesized with probability 0.3 before each
/// operator after the first. Draws whose value is 0 are rejected so the
/// guessed answer is always wrong.
pub fn generate_task<R: Rng + ?Sized>(rng: &mut R) -> Task {
    loop {
        let n = rng.gen_range(2..=4);
        let operands: Vec<i64> = (0..n).map(|_| rng.gen_range(10..=999)).collect();
        let operators: Vec<char> = (1..n).map(|_| OPERATORS[rng.gen_range(0..3)]).collect();
        let mut expression = operands[0].to_string();
        for (k, (op, x)) in operators.iter().zip(&operands[1..]).enumerate() {
            if k > 0 && rng.gen_bool(0.3) {
                expression = format!("({expression})");
            }
            expression = format!("{expression} {op} {x}");
        }
        let truth = evaluate_expression(&expression).expect("generated expressions are valid");
        if truth != 0 {
            return Task {
                expression,
                truth,
                operands,
                operators,
            };
        }
    }
}

/// Macro-actions in sampling order; the discriminant is the logit index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MacroAction {
    Exec = 0,
    WriteEvalCode = 1,
    WritePartialCode = 2,
    Think = 3,
    AnswerFromObs = 4,
    AnswerGuess = 5,
}

pub const ACTION_COUNT: usize = 6;

impl MacroAction {
    pub const ALL: [MacroAction; ACTION_COUNT] = [
        MacroAction::Exec,
        MacroAction::WriteEvalCode,
        MacroAction::WritePartialCode,
        MacroAction::Think,
        MacroAction::AnswerFromObs,
        MacroAction::AnswerGuess,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MacroAction::Exec => "EXEC",
            MacroAction::WriteEvalCode => "WRITE_EVAL_CODE",
            MacroAction::WritePartialCode => "WRITE_PARTIAL_CODE",
            MacroAction::Think => "THINK",
            MacroAction::AnswerFromObs => "ANSWER_FROM_OBS",
            MacroAction::AnswerGuess => "ANSWER_GUESS",
        }
    }
}

impl fmt::Display for MacroAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Features of a trajectory prefix that select a policy row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContextKey {
    pub turn_index: usize,
    pub buffer_nonempty: bool,
    /// The latest observation exists and is non-empty.
    pub has_observation: bool,
    pub last_action: Option<MacroAction>,
}

impl ContextKey {
    /// First turn, code buffered, nothing observed, last action wrote the
    /// evaluating block: the context where executing is right.
    pub const BUFFERED_EVAL: ContextKey = ContextKey {
        turn_index: 1,
        buffer_nonempty: true,
        has_observation: false,
        last_action: Some(MacroAction::WriteEvalCode),
    };
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    #[test]
    fn reproducible() {
        let a = generate_task(&mut stream(7, Domain::Task, 3));
        let b = generate_task(&mut stream(7, Domain::Task, 3));
        assert_eq!(a, b);
    }

    #[test]
    fn bounds() {
        let mut rng = stream(1, Domain::Task, 0);
        for _ in 0..10_000 {
            let t = generate_task(&mut rng);
            assert!((2..=4).contains(&t.operands.len()));
            assert_eq!(t.operators.len(), t.operands.len() - 1);
            assert!(t.operands.iter().all(|x| (10..=999).contains(x)));
            assert!(t.operators.iter().all(|c| OPERATORS.contains(c)));
            assert_ne!(t.truth, 0);
        }
    }

    #[test]
    fn known_expression() {
        assert_eq!(evaluate_expression("(12 + 34) * 56 - 7").unwrap(), 2569);
        assert_eq!(evaluate_expression("(12 + 34) * 56 − 7").unwrap(), 2569);
    }

    #[test]
    fn action_order() {
        for (i, a) in MacroAction::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(MacroAction::from_index(i), Some(*a));
        }
        assert_eq!(MacroAction::Exec.index(), crate::EXEC_TOKEN);
        assert_eq!(MacroAction::from_index(ACTION_COUNT), None);
    }
}
