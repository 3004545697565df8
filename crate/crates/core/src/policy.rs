//! Explicit and implicit hierarchical policies over a vocabulary whose token 0
//! is the execution signal.
//!
//! The *implicit* policy is one flat softmax over `V + 1` logits. The
//! *explicit* policy first gates between continue (probability `σ(θ₀)`) and
//! execute (`1 − σ(θ₀)`), then draws a continue token from a softmax over
//! `θ₁..θ_V`. Both produce an [`ActionDistribution`] with the same layout, so
//! they can be compared entrywise.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::numeric::{log_add_exp, log_sum_exp, sigmoid, softmax};

/// Index of the execution token in every vocabulary.
pub const EXEC_TOKEN: usize = 0;

/// Flat logits `β₀..β_V` of the implicit policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ImplicitLogits(Vec<f64>);

impl ImplicitLogits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "implicit logits need the execution token and at least one continue token, got {} entries",
                values.len()
            )));
        }
        ensure_finite(&values, "beta")?;
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Number of continue tokens `V`.
    pub fn continue_vocab(&self) -> usize {
        self.0.len() - 1
    }

    pub fn exec_logit(&self) -> f64 {
        self.0[EXEC_TOKEN]
    }

    pub fn continue_logits(&self) -> &[f64] {
        &self.0[1..]
    }

    /// `ln Z` with `Z = Σ_{s≥1} e^{β_s}`.
    pub fn log_z(&self) -> f64 {
        log_sum_exp(self.continue_logits())
    }

    /// `γ = Z / (e^{β₀} + Z)`, evaluated as `exp(ln Z − ln(e^{β₀} + Z))`.
    pub fn gamma(&self) -> f64 {
        let log_z = self.log_z();
        (log_z - log_add_exp(self.exec_logit(), log_z)).exp()
    }
}

impl TryFrom<Vec<f64>> for ImplicitLogits {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ImplicitLogits> for Vec<f64> {
    fn from(l: ImplicitLogits) -> Self {
        l.0
    }
}

/// Gate logit `θ₀` and continue-token logits `θ₁..θ_V` of the explicit policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitParams {
    gate: f64,
    token_logits: Vec<f64>,
}

impl ExplicitParams {
    pub fn new(gate: f64, token_logits: Vec<f64>) -> Result<Self> {
        if token_logits.is_empty() {
            return Err(Error::InvalidInput(
                "explicit policy needs at least one continue token".into(),
            ));
        }
        ensure_finite(&[gate], "theta0")?;
        ensure_finite(&token_logits, "theta")?;
        Ok(Self { gate, token_logits })
    }

    pub fn gate(&self) -> f64 {
        self.gate
    }

    pub fn token_logits(&self) -> &[f64] {
        &self.token_logits
    }

    pub fn continue_vocab(&self) -> usize {
        self.token_logits.len()
    }

    /// Parameters laid out as `[θ₀, θ₁, …, θ_V]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.token_logits.len() + 1);
        out.push(self.gate);
        out.extend_from_slice(&self.token_logits);
        out
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        match flat.split_first() {
            Some((gate, rest)) => Self::new(*gate, rest.to_vec()),
            None => Err(Error::InvalidInput("empty explicit parameter vector".into())),
        }
    }
}

/// Probabilities of the execution token and each continue token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub execute_prob: f64,
    pub continue_probs: Vec<f64>,
}

impl ActionDistribution {
    /// Probability of token `index` in the joint `[exec, cont₁, …]` layout.
    pub fn prob(&self, index: usize) -> f64 {
        if index == EXEC_TOKEN {
            self.execute_prob
        } else {
            self.continue_probs[index - 1]
        }
    }

    pub fn total(&self) -> f64 {
        self.execute_prob + self.continue_probs.iter().sum::<f64>()
    }

    /// Largest entrywise absolute difference. Panics on mismatched lengths.
    pub fn max_abs_diff(&self, other: &ActionDistribution) -> f64 {
        assert_eq!(self.continue_probs.len(), other.continue_probs.len());
        self.continue_probs
            .iter()
            .zip(&other.continue_probs)
            .map(|(a, b)| (a - b).abs())
            .fold((self.execute_prob - other.execute_prob).abs(), f64::max)
    }
}

/// Residuals of the two conditions under which the explicit and implicit
/// policies coincide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    /// `|σ(θ₀) − γ|`
    pub condition1_residual: f64,
    /// `max_i |softmax(β₁..)_i − softmax(θ₁..)_i|`
    pub condition2_residual: f64,
    pub max_prob_deviation: f64,
}

impl EquivalenceReport {
    pub const ZERO: EquivalenceReport = EquivalenceReport {
        condition1_residual: 0.0,
        condition2_residual: 0.0,
        max_prob_deviation: 0.0,
    };

    /// Componentwise maximum.
    pub fn worst(self, other: EquivalenceReport) -> EquivalenceReport {
        EquivalenceReport {
            condition1_residual: self.condition1_residual.max(other.condition1_residual),
            condition2_residual: self.condition2_residual.max(other.condition2_residual),
            max_prob_deviation: self.max_prob_deviation.max(other.max_prob_deviation),
        }
    }

    pub fn max_residual(&self) -> f64 {
        self.condition1_residual
            .max(self.condition2_residual)
            .max(self.max_prob_deviation)
    }
}

pub fn implicit_distribution(logits: &ImplicitLogits) -> ActionDistribution {
    let mut probs = softmax(logits.values());
    let execute_prob = probs.remove(EXEC_TOKEN);
    ActionDistribution {
        execute_prob,
        continue_probs: probs,
    }
}

pub fn explicit_distribution(params: &ExplicitParams) -> ActionDistribution {
    let keep = sigmoid(params.gate);
    // 1 − σ(θ₀) = σ(−θ₀); avoids cancellation when the gate saturates
    let execute_prob = sigmoid(-params.gate);
    let continue_probs = softmax(&params.token_logits)
        .into_iter()
        .map(|p| keep * p)
        .collect();
    ActionDistribution {
        execute_prob,
        continue_probs,
    }
}

/// Canonical explicit policy matching `logits`: `θ_i = β_i` for `i ≥ 1` and
/// `θ₀ = ln Z − β₀`.
pub fn explicit_from_implicit(logits: &ImplicitLogits) -> ExplicitParams {
    ExplicitParams {
        gate: logits.log_z() - logits.exec_logit(),
        token_logits: logits.continue_logits().to_vec(),
    }
}

pub fn equivalence_conditions(
    params: &ExplicitParams,
    logits: &ImplicitLogits,
) -> Result<EquivalenceReport> {
    if params.continue_vocab() != logits.continue_vocab() {
        return Err(Error::DimensionMismatch {
            expected: logits.continue_vocab(),
            got: params.continue_vocab(),
        });
    }
    let condition1_residual = (sigmoid(params.gate) - logits.gamma()).abs();
    let condition2_residual = softmax(logits.continue_logits())
        .iter()
        .zip(softmax(&params.token_logits))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let max_prob_deviation =
        implicit_distribution(logits).max_abs_diff(&explicit_distribution(params));
    Ok(EquivalenceReport {
        condition1_residual,
        condition2_residual,
        max_prob_deviation,
    })
}
