//! Policy-gradient losses for both hierarchical parameterizations, the
//! corrected implicit surrogate loss, and the one-step update checker.
//!
//! Sign convention: every loss here is minimized, and updates are plain
//! gradient descent `x' = x − η ∇L`. A positive advantage therefore raises the
//! probability of the sampled token.
//!
//! Stop-gradient quantities (`γ`, `f`, `Z′/Z`) are produced by a separate
//! frozen pass ([`surrogate_quantities`]) and passed into the loss and
//! gradient as constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{log_sigmoid, log_softmax, log_sum_exp, sigmoid, softmax};
use crate::policy::{
    equivalence_conditions, explicit_from_implicit, EquivalenceReport, ExplicitParams,
    ImplicitLogits, EXEC_TOKEN,
};

/// How the `f·β₀` term of the surrogate loss is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FMode {
    /// `f = (1/η)·ln(Z′/Z)`, which makes the one-step update exact.
    Exact,
    /// `f = 0`, the small-update simplification used by the training objective.
    Zero,
}

impl std::str::FromStr for FMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(FMode::Exact),
            "zero" => Ok(FMode::Zero),
            other => Err(Error::InvalidInput(format!(
                "unknown f-mode `{other}` (expected exact or zero)"
            ))),
        }
    }
}

impl std::fmt::Display for FMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FMode::Exact => "exact",
            FMode::Zero => "zero",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateConfig {
    pub eta: f64,
    pub advantage: f64,
    pub sampled_index: usize,
    pub f_mode: FMode,
}

impl UpdateConfig {
    pub fn new(eta: f64, advantage: f64, sampled_index: usize, f_mode: FMode) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidInput(format!("eta must be positive, got {eta}")));
        }
        if !advantage.is_finite() {
            return Err(Error::InvalidInput("advantage is not finite".into()));
        }
        Ok(Self {
            eta,
            advantage,
            sampled_index,
            f_mode,
        })
    }

    fn check_vocab(&self, continue_vocab: usize) -> Result<()> {
        if self.sampled_index > continue_vocab {
            return Err(Error::InvalidInput(format!(
                "sampled index {} outside vocabulary of size {}",
                self.sampled_index,
                continue_vocab + 1
            )));
        }
        Ok(())
    }

    fn samples_exec(&self) -> bool {
        self.sampled_index == EXEC_TOKEN
    }
}

/// Frozen (stop-gradient) quantities of the surrogate loss at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateQuantities {
    pub z: f64,
    pub z_prime: f64,
    pub gamma: f64,
    pub f: f64,
    pub log_z: f64,
    pub log_z_prime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `−A·log π_E(i)`.
pub fn explicit_pg_loss(params: &ExplicitParams, cfg: &UpdateConfig) -> Result<f64> {
    cfg.check_vocab(params.continue_vocab())?;
    let i = cfg.sampled_index;
    let log_p = if i == EXEC_TOKEN {
        log_sigmoid(-params.gate())
    } else {
        let theta = params.token_logits();
        log_sigmoid(params.gate()) + theta[i - 1] - log_sum_exp(theta)
    };
    Ok(-cfg.advantage * log_p)
}

pub fn explicit_pg_gradient(params: &ExplicitParams, cfg: &UpdateConfig) -> Result<GradientVector> {
    cfg.check_vocab(params.continue_vocab())?;
    let a = cfg.advantage;
    let mut grad = vec![0.0; params.continue_vocab() + 1];
    if cfg.samples_exec() {
        grad[0] = a * sigmoid(params.gate());
    } else {
        grad[0] = -a * (1.0 - sigmoid(params.gate()));
        for (j, p) in softmax(params.token_logits()).into_iter().enumerate() {
            grad[j + 1] = a * p;
        }
        grad[cfg.sampled_index] -= a;
    }
    Ok(GradientVector(grad))
}

/// `−A·log π_I(i)`, the uncorrected implicit loss.
pub fn naive_implicit_loss(logits: &ImplicitLogits, cfg: &UpdateConfig) -> Result<f64> {
    cfg.check_vocab(logits.continue_vocab())?;
    let b = logits.values();
    Ok(-cfg.advantage * (b[cfg.sampled_index] - log_sum_exp(b)))
}

pub fn naive_implicit_gradient(
    logits: &ImplicitLogits,
    cfg: &UpdateConfig,
) -> Result<GradientVector> {
    cfg.check_vocab(logits.continue_vocab())?;
    let a = cfg.advantage;
    let mut grad: Vec<f64> = softmax(logits.values()).into_iter().map(|p| a * p).collect();
    grad[cfg.sampled_index] -= a;
    Ok(GradientVector(grad))
}

/// Frozen pass: `Z`, `Z′`, `γ` and `f` at the current logits.
///
/// `Z′` is the continue-token partition sum after the `i ≥ 1` update,
/// `Σ_{s≥1} exp(β_s + ηA(δ_{si} − softmax₁..V(β)_s))`. When the execution
/// token is sampled the continue logits do not move, so `Z′ = Z` and `f = 0`.
pub fn surrogate_quantities(
    logits: &ImplicitLogits,
    cfg: &UpdateConfig,
) -> Result<SurrogateQuantities> {
    cfg.check_vocab(logits.continue_vocab())?;
    let cont = logits.continue_logits();
    let log_z = log_sum_exp(cont);
    let log_z_prime = if cfg.samples_exec() {
        log_z
    } else {
        let step = cfg.eta * cfg.advantage;
        let shifted: Vec<f64> = cont
            .iter()
            .zip(softmax(cont))
            .enumerate()
            .map(|(k, (b, q))| {
                let delta = if k + 1 == cfg.sampled_index { 1.0 } else { 0.0 };
                b + step * (delta - q)
            })
            .collect();
        log_sum_exp(&shifted)
    };
    let f = match cfg.f_mode {
        FMode::Zero => 0.0,
        FMode::Exact => (log_z_prime - log_z) / cfg.eta,
    };
    Ok(SurrogateQuantities {
        z: log_z.exp(),
        z_prime: log_z_prime.exp(),
        gamma: logits.gamma(),
        f,
        log_z,
        log_z_prime,
    })
}

/// Surrogate loss evaluated with caller-supplied frozen quantities. `γ` and
/// `f` are constants here; only `β` varies.
pub fn surrogate_loss_frozen(
    logits: &ImplicitLogits,
    cfg: &UpdateConfig,
    frozen: &SurrogateQuantities,
) -> Result<f64> {
    cfg.check_vocab(logits.continue_vocab())?;
    let a = cfg.advantage;
    let b = logits.values();
    let log_z = log_sum_exp(logits.continue_logits());
    let mut loss = -a * (b[cfg.sampled_index] - log_sum_exp(b)) - a * frozen.gamma * log_z;
    if !cfg.samples_exec() {
        loss += a * log_z - frozen.f * b[EXEC_TOKEN];
    }
    Ok(loss)
}

pub fn surrogate_loss(logits: &ImplicitLogits, cfg: &UpdateConfig) -> Result<f64> {
    let frozen = surrogate_quantities(logits, cfg)?;
    surrogate_loss_frozen(logits, cfg, &frozen)
}

pub fn surrogate_gradient_frozen(
    logits: &ImplicitLogits,
    cfg: &UpdateConfig,
    frozen: &SurrogateQuantities,
) -> Result<GradientVector> {
    cfg.check_vocab(logits.continue_vocab())?;
    let a = cfg.advantage;
    let mut grad = vec![0.0; logits.values().len()];
    if cfg.samples_exec() {
        grad[0] = -a * frozen.gamma;
    } else {
        grad[0] = a * (1.0 - frozen.gamma) - frozen.f;
        for (j, q) in softmax(logits.continue_logits()).into_iter().enumerate() {
            grad[j + 1] = a * q;
        }
        grad[cfg.sampled_index] -= a;
    }
    Ok(GradientVector(grad))
}

pub fn surrogate_gradient(logits: &ImplicitLogits, cfg: &UpdateConfig) -> Result<GradientVector> {
    let frozen = surrogate_quantities(logits, cfg)?;
    surrogate_gradient_frozen(logits, cfg, &frozen)
}

fn descend(x: &[f64], grad: &GradientVector, eta: f64) -> Vec<f64> {
    x.iter().zip(grad.values()).map(|(x, g)| x - eta * g).collect()
}

/// Result of updating an implicit policy and its matched explicit policy once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairUpdate {
    pub implicit: ImplicitLogits,
    pub explicit: ExplicitParams,
    pub report: EquivalenceReport,
}

fn step_pair(
    logits: &ImplicitLogits,
    params: &ExplicitParams,
    cfg: &UpdateConfig,
) -> Result<PairUpdate> {
    let beta_grad = surrogate_gradient(logits, cfg)?;
    let theta_grad = explicit_pg_gradient(params, cfg)?;
    let implicit = ImplicitLogits::new(descend(logits.values(), &beta_grad, cfg.eta))?;
    let explicit = ExplicitParams::from_flat(&descend(&params.to_flat(), &theta_grad, cfg.eta))?;
    let report = equivalence_conditions(&explicit, &implicit)?;
    Ok(PairUpdate {
        implicit,
        explicit,
        report,
    })
}

/// Matches `β` with its canonical explicit policy, applies one descent step
/// to each (surrogate loss on `β`, explicit PG loss on `θ`) and reports how
/// far apart the updated policies are.
pub fn one_step_pair_update(logits: &ImplicitLogits, cfg: &UpdateConfig) -> Result<PairUpdate> {
    step_pair(logits, &explicit_from_implicit(logits), cfg)
}

/// Same as [`one_step_pair_update`] but the implicit side takes the
/// uncorrected `−A·log π_I(i)` step.
pub fn naive_pair_update(logits: &ImplicitLogits, cfg: &UpdateConfig) -> Result<PairUpdate> {
    let params = explicit_from_implicit(logits);
    let beta_grad = naive_implicit_gradient(logits, cfg)?;
    let theta_grad = explicit_pg_gradient(&params, cfg)?;
    let implicit = ImplicitLogits::new(descend(logits.values(), &beta_grad, cfg.eta))?;
    let explicit = ExplicitParams::from_flat(&descend(&params.to_flat(), &theta_grad, cfg.eta))?;
    let report = equivalence_conditions(&explicit, &implicit)?;
    Ok(PairUpdate {
        implicit,
        explicit,
        report,
    })
}

/// Runs one pair update per entry of `sampled_indices`, each with the
/// template's `η`, `A` and f-mode. The explicit and implicit parameters evolve
/// independently after the initial match; `f` is re-derived from the current
/// `β` at every step. Returns the componentwise worst report.
pub fn iterated_equivalence(
    logits: &ImplicitLogits,
    template: &UpdateConfig,
    sampled_indices: &[usize],
) -> Result<EquivalenceReport> {
    if sampled_indices.is_empty() {
        return Err(Error::InvalidInput("iterated equivalence needs at least one step".into()));
    }
    let mut beta = logits.clone();
    let mut theta = explicit_from_implicit(logits);
    let mut worst = EquivalenceReport::ZERO;
    for &i in sampled_indices {
        let cfg = UpdateConfig {
            sampled_index: i,
            ..*template
        };
        let next = step_pair(&beta, &theta, &cfg)?;
        worst = worst.worst(next.report);
        beta = next.implicit;
        theta = next.explicit;
    }
    Ok(worst)
}

/// Entrywise distance between the implicit distributions reached by one
/// Exact-f step and one Zero-f step from the same logits.
pub fn f_mode_step_deviation(logits: &ImplicitLogits, cfg: &UpdateConfig) -> Result<f64> {
    let exact = UpdateConfig {
        f_mode: FMode::Exact,
        ..*cfg
    };
    let zero = UpdateConfig {
        f_mode: FMode::Zero,
        ..*cfg
    };
    let a = one_step_pair_update(logits, &exact)?;
    let b = one_step_pair_update(logits, &zero)?;
    let pa = log_softmax(a.implicit.values());
    let pb = log_softmax(b.implicit.values());
    Ok(pa
        .iter()
        .zip(&pb)
        .map(|(x, y)| (x.exp() - y.exp()).abs())
        .fold(0.0, f64::max))
}
