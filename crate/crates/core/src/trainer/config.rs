use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training hyperparameters. The config file format is flat `key = value`
/// lines with keys spelled exactly as the field names; `#` starts a comment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub group_size: usize,
    /// Policy updates per sampled batch (μ).
    pub inner_iterations: usize,
    pub max_turns: usize,
    /// Actions a single turn may take before it is closed.
    pub max_actions_per_turn: usize,
    /// Prompts per step; each gets `group_size` responses.
    pub batch_prompts: usize,
    pub acc_filter_low: f64,
    pub acc_filter_high: f64,
    pub steps: usize,
    pub seed: u64,
    /// Include the hierarchical correction in the objective at all. With
    /// `false` the correction branch is skipped entirely, whatever `lambda`.
    pub correction: bool,
    /// Dump every n-th step's batch to the trajectory log (the final step is
    /// always written). 0 writes only the final step.
    pub trajectory_log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.05,
            lambda: 1e-3,
            epsilon: 0.2,
            group_size: 8,
            inner_iterations: 1,
            max_turns: 5,
            max_actions_per_turn: 4,
            batch_prompts: 32,
            acc_filter_low: 0.05,
            acc_filter_high: 0.95,
            steps: 300,
            seed: 20_240_917,
            correction: true,
            trajectory_log_every: 50,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "eta",
    "lambda",
    "epsilon",
    "group_size",
    "inner_iterations",
    "max_turns",
    "max_actions_per_turn",
    "batch_prompts",
    "acc_filter_low",
    "acc_filter_high",
    "steps",
    "seed",
    "correction",
    "trajectory_log_every",
];

fn parse_value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("invalid value `{raw}` for key `{key}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return fail(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return fail(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if self.group_size < 2 {
            return fail(format!("group_size must be >= 2, got {}", self.group_size));
        }
        if self.group_size >= 1 << 16 || self.batch_prompts >= 1 << 16 {
            return fail("group_size and batch_prompts must stay below 65536".into());
        }
        if self.inner_iterations == 0 {
            return fail("inner_iterations must be >= 1".into());
        }
        if self.max_turns == 0 || self.max_actions_per_turn == 0 {
            return fail("max_turns and max_actions_per_turn must be >= 1".into());
        }
        if self.batch_prompts == 0 {
            return fail("batch_prompts must be >= 1".into());
        }
        if !(0.0 <= self.acc_filter_low
            && self.acc_filter_low < self.acc_filter_high
            && self.acc_filter_high <= 1.0)
        {
            return fail(format!(
                "need 0 <= acc_filter_low < acc_filter_high <= 1, got {} and {}",
                self.acc_filter_low, self.acc_filter_high
            ));
        }
        Ok(())
    }

    /// Applies one `key = value` pair.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "eta" => self.eta = parse_value(key, raw)?,
            "lambda" => self.lambda = parse_value(key, raw)?,
            "epsilon" => self.epsilon = parse_value(key, raw)?,
            "group_size" => self.group_size = parse_value(key, raw)?,
            "inner_iterations" => self.inner_iterations = parse_value(key, raw)?,
            "max_turns" => self.max_turns = parse_value(key, raw)?,
            "max_actions_per_turn" => self.max_actions_per_turn = parse_value(key, raw)?,
            "batch_prompts" => self.batch_prompts = parse_value(key, raw)?,
            "acc_filter_low" => self.acc_filter_low = parse_value(key, raw)?,
            "acc_filter_high" => self.acc_filter_high = parse_value(key, raw)?,
            "steps" => self.steps = parse_value(key, raw)?,
            "seed" => self.seed = parse_value(key, raw)?,
            "correction" => self.correction = parse_value(key, raw)?,
            "trajectory_log_every" => self.trajectory_log_every = parse_value(key, raw)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a config file on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    k + 1
                )));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the config in the file format, one key per line in
    /// [`CONFIG_KEYS`] order.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "eta = {}", self.eta);
        let _ = writeln!(out, "lambda = {}", self.lambda);
        let _ = writeln!(out, "epsilon = {}", self.epsilon);
        let _ = writeln!(out, "group_size = {}", self.group_size);
        let _ = writeln!(out, "inner_iterations = {}", self.inner_iterations);
        let _ = writeln!(out, "max_turns = {}", self.max_turns);
        let _ = writeln!(out, "max_actions_per_turn = {}", self.max_actions_per_turn);
        let _ = writeln!(out, "batch_prompts = {}", self.batch_prompts);
        let _ = writeln!(out, "acc_filter_low = {}", self.acc_filter_low);
        let _ = writeln!(out, "acc_filter_high = {}", self.acc_filter_high);
        let _ = writeln!(out, "steps = {}", self.steps);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "correction = {}", self.correction);
        let _ = writeln!(out, "trajectory_log_every = {}", self.trajectory_log_every);
        out
    }
}
