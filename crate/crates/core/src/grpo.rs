//! Group-relative advantages, the clipped ratio term, the hierarchical
//! correction and the IH-GRPO objective with its analytical gradient.
//!
//! The objective is maximized. Gradients are returned per response and
//! position with respect to that position's logits `β_{i,t,·}`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::numeric::{log_add_exp, log_softmax, log_sum_exp, softmax};
use crate::policy::EXEC_TOKEN;

/// Reward spread below which a group carries no learning signal.
pub const DEGENERATE_STD: f64 = 1e-8;
pub const DEFAULT_EPSILON: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub epsilon: f64,
    pub lambda: f64,
}

impl ClipConfig {
    pub fn new(epsilon: f64, lambda: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidInput(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self { epsilon, lambda })
    }
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StdMode {
    /// Divide by `n`.
    #[default]
    Population,
    /// Divide by `n − 1`.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Advantages {
    Normalized(Vec<f64>),
    /// Reward spread below [`DEGENERATE_STD`]; nothing to learn from.
    Degenerate,
}

impl Advantages {
    pub fn values(&self) -> Option<&[f64]> {
        match self {
            Advantages::Normalized(v) => Some(v),
            Advantages::Degenerate => None,
        }
    }
}

pub fn group_advantages(rewards: &[f64]) -> Result<Advantages> {
    group_advantages_with(rewards, StdMode::Population)
}

pub fn group_advantages_with(rewards: &[f64], mode: StdMode) -> Result<Advantages> {
    if rewards.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "a group needs at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    ensure_finite(rewards, "reward")?;
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let ss: f64 = rewards.iter().map(|r| (r - mean) * (r - mean)).sum();
    let denom = match mode {
        StdMode::Population => n,
        StdMode::Sample => n - 1.0,
    };
    let std = (ss / denom).sqrt();
    if std < DEGENERATE_STD {
        return Ok(Advantages::Degenerate);
    }
    Ok(Advantages::Normalized(
        rewards.iter().map(|r| (r - mean) / std).collect(),
    ))
}

/// `min(ρA, clip(ρ, 1−ε, 1+ε)·A)`.
pub fn clipped_token_term(ratio: f64, advantage: f64, cfg: &ClipConfig) -> Result<f64> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidInput(format!("ratio must be positive, got {ratio}")));
    }
    Ok(clip_term(ratio, advantage, cfg.epsilon).0)
}

/// Returns the clipped term and whether the unclipped (ratio-dependent)
/// branch is the one selected by the `min`.
fn clip_term(ratio: f64, advantage: f64, epsilon: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

/// `ln Z` and `γ` for one position's logits, `Z = Σ_{s≥1} e^{β_s}`.
fn partition(position_logits: &[f64]) -> (f64, f64) {
    let log_z = log_sum_exp(&position_logits[1..]);
    let gamma = (log_z - log_add_exp(position_logits[EXEC_TOKEN], log_z)).exp();
    (log_z, gamma)
}

/// `c = sg(γ)·ln Z − ln Z·𝟙{token ≠ exec}`.
pub fn ih_correction(position_logits: &[f64], sampled_token: usize) -> Result<f64> {
    check_position(position_logits, sampled_token)?;
    let (log_z, gamma) = partition(position_logits);
    Ok(correction_value(log_z, gamma, sampled_token))
}

fn correction_value(log_z: f64, gamma: f64, sampled_token: usize) -> f64 {
    if sampled_token == EXEC_TOKEN {
        gamma * log_z
    } else {
        (gamma - 1.0) * log_z
    }
}

/// Gradient of [`ih_correction`] with `γ` frozen: zero on `β₀`,
/// `(γ − 𝟙{token ≠ exec})·softmax(β₁..)_j` elsewhere.
pub fn ih_correction_gradient(position_logits: &[f64], sampled_token: usize) -> Result<Vec<f64>> {
    check_position(position_logits, sampled_token)?;
    let (_, gamma) = partition(position_logits);
    let coeff = if sampled_token == EXEC_TOKEN { gamma } else { gamma - 1.0 };
    let mut grad = vec![0.0; position_logits.len()];
    for (g, q) in grad[1..].iter_mut().zip(softmax(&position_logits[1..])) {
        *g = coeff * q;
    }
    Ok(grad)
}

fn check_position(position_logits: &[f64], sampled_token: usize) -> Result<()> {
    if position_logits.len() < 2 {
        return Err(Error::InvalidInput(
            "position logits need the execution token and one continue token".into(),
        ));
    }
    if sampled_token >= position_logits.len() {
        return Err(Error::InvalidInput(format!(
            "sampled token {sampled_token} outside vocabulary of size {}",
            position_logits.len()
        )));
    }
    ensure_finite(position_logits, "beta")
}

/// One generated position of a response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub token: usize,
    /// Log-probability of `token` under the policy that sampled it.
    pub old_log_prob: f64,
    /// Environment-generated positions are masked out of every sum.
    pub masked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub tokens: Vec<TokenRecord>,
}

impl Response {
    pub fn unmasked_len(&self) -> usize {
        self.tokens.iter().filter(|t| !t.masked).count()
    }
}

/// `G` responses to one prompt with their rewards and advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub responses: Vec<Response>,
    pub rewards: Vec<f64>,
    pub advantages: Advantages,
}

impl RolloutGroup {
    pub fn new(responses: Vec<Response>, rewards: Vec<f64>) -> Result<Self> {
        Self::with_std_mode(responses, rewards, StdMode::Population)
    }

    pub fn with_std_mode(responses: Vec<Response>, rewards: Vec<f64>, mode: StdMode) -> Result<Self> {
        if responses.len() != rewards.len() {
            return Err(Error::DimensionMismatch {
                expected: responses.len(),
                got: rewards.len(),
            });
        }
        let advantages = group_advantages_with(&rewards, mode)?;
        Ok(Self {
            responses,
            rewards,
            advantages,
        })
    }

    pub fn size(&self) -> usize {
        self.responses.len()
    }

    pub fn accuracy(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }
}

/// Current-policy logits for every position of every response in a group,
/// `logits[i][t]` has length `V + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogits {
    pub logits: Vec<Vec<Vec<f64>>>,
}

impl TokenLogits {
    fn check(&self, group: &RolloutGroup) -> Result<()> {
        if self.logits.len() != group.size() {
            return Err(Error::DimensionMismatch {
                expected: group.size(),
                got: self.logits.len(),
            });
        }
        for (resp, rows) in group.responses.iter().zip(&self.logits) {
            if resp.tokens.len() != rows.len() {
                return Err(Error::DimensionMismatch {
                    expected: resp.tokens.len(),
                    got: rows.len(),
                });
            }
            for (tok, row) in resp.tokens.iter().zip(rows) {
                check_position(row, tok.token)?;
            }
        }
        Ok(())
    }
}

/// Per-position terms, for inspection and CSV dumps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenTerm {
    pub response: usize,
    pub position: usize,
    pub ratio: f64,
    pub s: f64,
    pub c: f64,
    pub masked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    /// `grads[i][t]` is `∂J/∂β_{i,t,·}`; zero vectors at masked positions.
    pub grads: Vec<Vec<Vec<f64>>>,
    pub terms: Vec<TokenTerm>,
}

/// IH-GRPO objective of one group:
/// `(1/G) Σ_i (1/|o_i|) Σ_t [s_{i,t} + λ·sg(s_{i,t})·c_{i,t}]` over unmasked
/// positions. The correction's gradient flows only through `ln Z`.
pub fn ih_grpo_objective(
    group: &RolloutGroup,
    logits: &TokenLogits,
    cfg: &ClipConfig,
) -> Result<ObjectiveEval> {
    evaluate(group, logits, cfg, true)
}

/// Same evaluation with the correction branch compiled out of the loop.
pub fn ih_grpo_objective_uncorrected(
    group: &RolloutGroup,
    logits: &TokenLogits,
    cfg: &ClipConfig,
) -> Result<ObjectiveEval> {
    evaluate(group, logits, cfg, false)
}

fn evaluate(
    group: &RolloutGroup,
    logits: &TokenLogits,
    cfg: &ClipConfig,
    with_correction: bool,
) -> Result<ObjectiveEval> {
    let advantages = group.advantages.values().ok_or(Error::DegenerateGroup)?;
    logits.check(group)?;
    let g = group.size() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(group.size());
    let mut terms = Vec::new();
    for (i, (resp, rows)) in group.responses.iter().zip(&logits.logits).enumerate() {
        let a = advantages[i];
        let len = resp.unmasked_len();
        let weight = if len == 0 { 0.0 } else { 1.0 / (g * len as f64) };
        let mut resp_sum = 0.0;
        let mut resp_grads = Vec::with_capacity(rows.len());
        for (t, (tok, beta)) in resp.tokens.iter().zip(rows).enumerate() {
            let mut grad = vec![0.0; beta.len()];
            if tok.masked {
                terms.push(TokenTerm {
                    response: i,
                    position: t,
                    ratio: 1.0,
                    s: 0.0,
                    c: 0.0,
                    masked: true,
                });
                resp_grads.push(grad);
                continue;
            }
            let log_p = log_softmax(beta);
            let ratio = (log_p[tok.token] - tok.old_log_prob).exp();
            let (s, flows) = clip_term(ratio, a, cfg.epsilon);
            let (log_z, gamma) = partition(beta);
            let c = correction_value(log_z, gamma, tok.token);
            let mut term = s;
            if with_correction {
                term += cfg.lambda * s * c;
            }
            resp_sum += term;
            if flows {
                let scale = weight * ratio * a;
                for (j, (gj, lp)) in grad.iter_mut().zip(&log_p).enumerate() {
                    let onehot = if j == tok.token { 1.0 } else { 0.0 };
                    *gj = scale * (onehot - lp.exp());
                }
            }
            if with_correction {
                let coeff = if tok.token == EXEC_TOKEN { gamma } else { gamma - 1.0 };
                let scale = weight * cfg.lambda * s * coeff;
                for (gj, q) in grad[1..].iter_mut().zip(softmax(&beta[1..])) {
                    *gj += scale * q;
                }
            }
            terms.push(TokenTerm {
                response: i,
                position: t,
                ratio,
                s,
                c,
                masked: false,
            });
            resp_grads.push(grad);
        }
        if len > 0 {
            value += resp_sum / len as f64;
        }
        grads.push(resp_grads);
    }
    Ok(ObjectiveEval {
        value: value / g,
        grads,
        terms,
    })
}

/// Plain clipped GRPO objective (no hierarchical correction), value only.
pub fn grpo_objective(group: &RolloutGroup, logits: &TokenLogits, cfg: &ClipConfig) -> Result<f64> {
    let advantages = group.advantages.values().ok_or(Error::DegenerateGroup)?;
    logits.check(group)?;
    let mut total = 0.0;
    for (i, (resp, rows)) in group.responses.iter().zip(&logits.logits).enumerate() {
        let mut sum = 0.0;
        let mut len = 0usize;
        for (tok, beta) in resp.tokens.iter().zip(rows) {
            if tok.masked {
                continue;
            }
            let log_p = beta[tok.token] - log_sum_exp(beta);
            let ratio = (log_p - tok.old_log_prob).exp();
            sum += clip_term(ratio, advantages[i], cfg.epsilon).0;
            len += 1;
        }
        if len > 0 {
            total += sum / len as f64;
        }
    }
    Ok(total / group.size() as f64)
}

/// Writes `response,position,ratio,s,c,masked` rows.
pub fn write_terms_csv<W: Write>(terms: &[TokenTerm], mut out: W) -> std::io::Result<()> {
    writeln!(out, "response,position,ratio,s,c,masked")?;
    for t in terms {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            t.response, t.position, t.ratio, t.s, t.c, t.masked
        )?;
    }
    Ok(())
}

/// Exact rational used for answer comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rational {
    num: i128,
    den: i128,
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.abs()
}

fn parse_integer(s: &str) -> Option<i128> {
    let s = s.trim();
    let (neg, digits) = match s.chars().next()? {
        '-' => (true, &s[1..]),
        '−' => (true, &s['−'.len_utf8()..]),
        '+' => (false, &s[1..]),
        _ => (false, s),
    };
    let digits = digits.trim_start();
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let v: i128 = digits.parse().ok()?;
    Some(if neg { -v } else { v })
}

fn parse_rational(s: &str) -> Option<Rational> {
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (parse_integer(n)?, parse_integer(d)?),
        None => (parse_integer(s)?, 1),
    };
    if den == 0 {
        return None;
    }
    let g = gcd(num, den).max(1);
    let sign = if den < 0 { -1 } else { 1 };
    Some(Rational {
        num: sign * num / g,
        den: sign * den / g,
    })
}

/// 1 when both answers parse as the same integer or rational, else 0.
pub fn reward_correct(final_answer: &str, ground_truth: &str) -> f64 {
    match (parse_rational(final_answer), parse_rational(ground_truth)) {
        (Some(a), Some(b)) if a == b => 1.0,
        _ => 0.0,
    }
}
