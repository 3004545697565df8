//! Trajectories with decoupled code writing and execution.
//!
//! Code steps are buffered, not run. An execution signal joins every buffered
//! block (newline separated, generation order) into one program, runs it in
//! the trajectory's persistent sandbox and appends the observation. Each
//! signal/observation pair closes a turn.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::sandbox::{sandbox_execute, SandboxState};
use crate::error::{Error, Result};

/// Rendered form of the execution token.
pub const EXEC_MARKER: &str = "<exec>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepKind {
    Text,
    Code,
    ExecSignal,
    Observation,
    FinalAnswer,
}

impl StepKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepKind::Text => "Text",
            StepKind::Code => "Code",
            StepKind::ExecSignal => "ExecSignal",
            StepKind::Observation => "Observation",
            StepKind::FinalAnswer => "FinalAnswer",
        }
    }
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "Text" => StepKind::Text,
            "Code" => StepKind::Code,
            "ExecSignal" => StepKind::ExecSignal,
            "Observation" => StepKind::Observation,
            "FinalAnswer" => StepKind::FinalAnswer,
            other => return Err(Error::InvalidInput(format!("unknown step kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub kind: StepKind,
    pub content: String,
    /// 1-based turn the step belongs to.
    pub turn: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    steps: Vec<Step>,
    buffer: Vec<String>,
    sandbox: SandboxState,
    turn: usize,
    max_turns: usize,
    terminated: bool,
}

impl Trajectory {
    pub fn new(max_turns: usize) -> Self {
        Self {
            steps: Vec::new(),
            buffer: Vec::new(),
            sandbox: SandboxState::default(),
            turn: 1,
            max_turns: max_turns.max(1),
            terminated: false,
        }
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn into_steps(self) -> Vec<Step> {
        self.steps
    }

    pub fn buffer(&self) -> &[String] {
        &self.buffer
    }

    pub fn sandbox(&self) -> &SandboxState {
        &self.sandbox
    }

    /// Turn that the next step would belong to.
    pub fn current_turn(&self) -> usize {
        self.turn
    }

    pub fn max_turns(&self) -> usize {
        self.max_turns
    }

    /// Ended with a final answer.
    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    /// Every turn of the budget has been closed without a final answer.
    pub fn is_budget_exhausted(&self) -> bool {
        !self.terminated && self.turn > self.max_turns
    }

    pub fn is_open(&self) -> bool {
        !self.terminated && self.turn <= self.max_turns
    }

    /// Most recent observation, if any.
    pub fn last_observation(&self) -> Option<&str> {
        self.steps
            .iter()
            .rev()
            .find(|s| s.kind == StepKind::Observation)
            .map(|s| s.content.as_str())
    }

    pub fn final_answer(&self) -> Option<&str> {
        match self.steps.last() {
            Some(s) if s.kind == StepKind::FinalAnswer => Some(&s.content),
            _ => None,
        }
    }

    fn ensure_open(&self) -> Result<()> {
        if self.terminated {
            return Err(Error::Terminated);
        }
        if self.turn > self.max_turns {
            return Err(Error::InvalidInput(format!(
                "turn budget of {} exhausted",
                self.max_turns
            )));
        }
        Ok(())
    }

    /// Appends a Text, Code or FinalAnswer step. Code is buffered, not run.
    /// Execution signals go through [`Trajectory::trigger_execution`];
    /// observations are only ever produced by it.
    pub fn append_step(&mut self, kind: StepKind, content: impl Into<String>) -> Result<()> {
        self.ensure_open()?;
        let content = content.into();
        match kind {
            StepKind::Code => self.buffer.push(content.clone()),
            StepKind::Text => {}
            StepKind::FinalAnswer => self.terminated = true,
            StepKind::ExecSignal | StepKind::Observation => {
                return Err(Error::InvalidInput(format!(
                    "{kind} steps are produced by trigger_execution"
                )))
            }
        }
        self.steps.push(Step {
            kind,
            content,
            turn: self.turn,
        });
        Ok(())
    }

    /// Emits the execution signal, runs the merged buffer and appends the
    /// observation, closing the current turn. Sandbox failures become the
    /// observation text.
    pub fn trigger_execution(&mut self) -> Result<Step> {
        self.ensure_open()?;
        self.steps.push(Step {
            kind: StepKind::ExecSignal,
            content: EXEC_MARKER.to_string(),
            turn: self.turn,
        });
        let content = if self.buffer.is_empty() {
            String::new()
        } else {
            let program = self.buffer.join("\n");
            self.buffer.clear();
            match sandbox_execute(&mut self.sandbox, &program) {
                Ok(values) => values
                    .iter()
                    .map(i64::to_string)
                    .collect::<Vec<_>>()
                    .join("\n"),
                Err(e) => e.to_string(),
            }
        };
        let obs = Step {
            kind: StepKind::Observation,
            content,
            turn: self.turn,
        };
        self.steps.push(obs.clone());
        self.turn += 1;
        Ok(obs)
    }

    /// Closes the current turn without executing anything (the response
    /// ran out of room in this turn). Buffered code carries over.
    pub fn close_turn(&mut self) -> Result<()> {
        self.ensure_open()?;
        self.turn += 1;
        Ok(())
    }
}

/// Checks that `next` may follow `prev`: observations follow an execution
/// signal directly, every signal is followed by an observation, nothing
/// follows a final answer, and turn numbers start at 1 and never decrease.
pub fn check_transition(prev: Option<&Step>, next: &Step) -> std::result::Result<(), String> {
    if next.turn == 0 {
        return Err("turn numbers start at 1".into());
    }
    let Some(prev) = prev else {
        return match next.kind {
            StepKind::Observation => Err("Observation without a preceding ExecSignal".into()),
            _ => Ok(()),
        };
    };
    if next.turn < prev.turn {
        return Err(format!("turn {} after turn {}", next.turn, prev.turn));
    }
    match (prev.kind, next.kind) {
        (StepKind::FinalAnswer, _) => Err("step after FinalAnswer".into()),
        (StepKind::ExecSignal, StepKind::Observation) => Ok(()),
        (StepKind::ExecSignal, _) => Err("ExecSignal not followed by an Observation".into()),
        (_, StepKind::Observation) => Err("Observation without a preceding ExecSignal".into()),
        _ => Ok(()),
    }
}

/// Validates a complete step sequence. Returns the index of the first
/// offending step.
pub fn validate_steps(steps: &[Step]) -> std::result::Result<(), (usize, String)> {
    for (k, step) in steps.iter().enumerate() {
        check_transition(k.checked_sub(1).map(|p| &steps[p]), step).map_err(|m| (k, m))?;
    }
    match steps.last() {
        Some(last) if last.kind == StepKind::ExecSignal => Err((
            steps.len() - 1,
            "ExecSignal not followed by an Observation".into(),
        )),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_is_deferred() {
        let mut t = Trajectory::new(5);
        t.append_step(StepKind::Code, "x = 2").unwrap();
        assert_eq!(t.buffer().len(), 1);
        assert!(t.last_observation().is_none());
        t.append_step(StepKind::Text, "thinking").unwrap();
        assert_eq!(t.buffer().len(), 1);
    }

    #[test]
    fn merged_execution() {
        let mut t = Trajectory::new(5);
        t.append_step(StepKind::Code, "x = 2").unwrap();
        t.append_step(StepKind::Code, "y = x + 3\nemit y").unwrap();
        let obs = t.trigger_execution().unwrap();
        assert_eq!(obs.kind, StepKind::Observation);
        assert_eq!(obs.content, "5");
        assert!(t.buffer().is_empty());
        assert_eq!(t.current_turn(), 2);
    }

    #[test]
    fn empty_buffer_and_errors() {
        let mut t = Trajectory::new(5);
        assert_eq!(t.trigger_execution().unwrap().content, "");
        t.append_step(StepKind::Code, "emit 1/0").unwrap();
        assert_eq!(t.trigger_execution().unwrap().content, "error: division by zero");
        assert!(t.buffer().is_empty());
    }

    #[test]
    fn sandbox_state_persists_across_executions() {
        let mut t = Trajectory::new(5);
        t.append_step(StepKind::Code, "a = 3").unwrap();
        t.trigger_execution().unwrap();
        t.append_step(StepKind::Code, "emit a + 1").unwrap();
        assert_eq!(t.trigger_execution().unwrap().content, "4");
    }

    #[test]
    fn final_answer_terminates() {
        let mut t = Trajectory::new(5);
        t.append_step(StepKind::FinalAnswer, "42").unwrap();
        assert!(t.is_terminated());
        assert_eq!(t.append_step(StepKind::Text, "more"), Err(Error::Terminated));
        assert_eq!(t.trigger_execution(), Err(Error::Terminated));
        assert_eq!(t.final_answer(), Some("42"));
    }

    #[test]
    fn turn_budget_is_enforced() {
        let mut t = Trajectory::new(2);
        t.trigger_execution().unwrap();
        t.close_turn().unwrap();
        assert!(t.is_budget_exhausted());
        assert!(t.append_step(StepKind::Text, "x").is_err());
        assert!(t.steps().iter().all(|s| s.turn <= 2));
    }

    #[test]
    fn signals_cannot_be_appended_directly() {
        let mut t = Trajectory::new(5);
        assert!(t.append_step(StepKind::Observation, "5").is_err());
        assert!(t.append_step(StepKind::ExecSignal, EXEC_MARKER).is_err());
    }

    #[test]
    fn validation() {
        let step = |kind, turn| Step {
            kind,
            content: String::new(),
            turn,
        };
        assert!(validate_steps(&[step(StepKind::Code, 1), step(StepKind::ExecSignal, 1), step(StepKind::Observation, 1)]).is_ok());
        assert_eq!(validate_steps(&[step(StepKind::Observation, 1)]).unwrap_err().0, 0);
        assert_eq!(
            validate_steps(&[step(StepKind::ExecSignal, 1), step(StepKind::Text, 1)]).unwrap_err().0,
            1
        );
        assert_eq!(
            validate_steps(&[step(StepKind::FinalAnswer, 1), step(StepKind::Text, 1)]).unwrap_err().0,
            1
        );
        assert_eq!(
            validate_steps(&[step(StepKind::Text, 2), step(StepKind::Text, 1)]).unwrap_err().0,
            1
        );
    }
}
