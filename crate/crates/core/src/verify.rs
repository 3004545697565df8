//! Randomized sweeps over the one-step equivalence.
//!
//! Instances: `V` uniform in `[2, 64]`, `β ~ N(0, 1)`, `A` uniform in
//! `[−3, 3]`, `η` uniform in `[1e-3, 1e-1]`. The two case families sample
//! either the execution token or a uniformly chosen continue token.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::policy::{EquivalenceReport, ImplicitLogits, EXEC_TOKEN};
use crate::rng::{stream, Domain};
use crate::surrogate::{
    f_mode_step_deviation, iterated_equivalence, naive_pair_update, one_step_pair_update, FMode,
    UpdateConfig,
};

pub const MIN_VOCAB: usize = 2;
pub const MAX_VOCAB: usize = 64;

/// Sub-stream offsets inside [`Domain::Verify`] so the sweeps never share draws.
const ONE_STEP_EXEC: u64 = 0;
const ONE_STEP_CONTINUE: u64 = 1 << 40;
const ITERATED: u64 = 2 << 40;
const F_SCALING: u64 = 3 << 40;
const NAIVE: u64 = 4 << 40;

pub fn random_logits<R: Rng>(rng: &mut R) -> Result<ImplicitLogits> {
    let v = rng.gen_range(MIN_VOCAB..=MAX_VOCAB);
    let values = (0..=v).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    ImplicitLogits::new(values)
}

/// Draws one instance. `exec_case` selects the sampled-token family.
pub fn random_instance<R: Rng>(
    rng: &mut R,
    exec_case: bool,
    f_mode: FMode,
) -> Result<(ImplicitLogits, UpdateConfig)> {
    let logits = random_logits(rng)?;
    let advantage = rng.gen_range(-3.0..=3.0);
    let eta = rng.gen_range(1e-3..=1e-1);
    let sampled_index = if exec_case {
        EXEC_TOKEN
    } else {
        rng.gen_range(1..=logits.continue_vocab())
    };
    let cfg = UpdateConfig::new(eta, advantage, sampled_index, f_mode)?;
    Ok((logits, cfg))
}

/// Everything needed to replay one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceRecord {
    pub index: usize,
    pub beta: Vec<f64>,
    pub eta: f64,
    pub advantage: f64,
    pub sampled_index: usize,
    pub report: EquivalenceReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilySummary {
    pub instances: usize,
    pub worst: EquivalenceReport,
    pub worst_instance: Option<InstanceRecord>,
}

impl FamilySummary {
    fn new() -> Self {
        Self {
            instances: 0,
            worst: EquivalenceReport::ZERO,
            worst_instance: None,
        }
    }

    fn record(&mut self, rec: InstanceRecord) {
        self.instances += 1;
        self.worst = self.worst.worst(rec.report);
        let beats = self
            .worst_instance
            .as_ref()
            .is_none_or(|w| rec.report.max_residual() > w.report.max_residual());
        if beats {
            self.worst_instance = Some(rec);
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OneStepSummary {
    pub seed: u64,
    pub f_mode: FMode,
    pub exec_token: FamilySummary,
    pub continue_token: FamilySummary,
}

impl OneStepSummary {
    pub fn worst_deviation(&self) -> f64 {
        self.exec_token
            .worst
            .max_prob_deviation
            .max(self.continue_token.worst.max_prob_deviation)
    }

    pub fn worst_residual(&self) -> f64 {
        self.exec_token
            .worst
            .max_residual()
            .max(self.continue_token.worst.max_residual())
    }
}

/// One pair update per instance, `per_family` instances in each case family.
pub fn one_step_sweep(seed: u64, per_family: usize, f_mode: FMode) -> Result<OneStepSummary> {
    one_step_sweep_with(seed, per_family, f_mode, None)
}

/// [`one_step_sweep`] with every instance's advantage replaced by
/// `advantage` when given. The other draws are unchanged.
pub fn one_step_sweep_with(
    seed: u64,
    per_family: usize,
    f_mode: FMode,
    advantage: Option<f64>,
) -> Result<OneStepSummary> {
    let mut exec_token = FamilySummary::new();
    let mut continue_token = FamilySummary::new();
    for k in 0..per_family {
        for (exec_case, base, family) in [
            (true, ONE_STEP_EXEC, &mut exec_token),
            (false, ONE_STEP_CONTINUE, &mut continue_token),
        ] {
            let mut rng = stream(seed, Domain::Verify, base + k as u64);
            let (logits, mut cfg) = random_instance(&mut rng, exec_case, f_mode)?;
            if let Some(a) = advantage {
                cfg = UpdateConfig::new(cfg.eta, a, cfg.sampled_index, f_mode)?;
            }
            let update = one_step_pair_update(&logits, &cfg)?;
            family.record(InstanceRecord {
                index: k,
                beta: logits.values().to_vec(),
                eta: cfg.eta,
                advantage: cfg.advantage,
                sampled_index: cfg.sampled_index,
                report: update.report,
            });
        }
    }
    Ok(OneStepSummary {
        seed,
        f_mode,
        exec_token,
        continue_token,
    })
}

/// Single instance with a fixed configuration, for reproducing a reported case.
pub fn replay(beta: Vec<f64>, cfg: &UpdateConfig) -> Result<EquivalenceReport> {
    Ok(one_step_pair_update(&ImplicitLogits::new(beta)?, cfg)?.report)
}

#[derive(Debug, Clone, Serialize)]
pub struct IteratedSummary {
    pub instances: usize,
    pub steps: usize,
    pub f_mode: FMode,
    pub worst: EquivalenceReport,
}

/// `steps` consecutive pair updates on each of `instances` instances. The
/// sampled token at each step is the execution token with probability 1/2,
/// otherwise a uniform continue token.
pub fn iterated_sweep(
    seed: u64,
    instances: usize,
    steps: usize,
    f_mode: FMode,
) -> Result<IteratedSummary> {
    let mut worst = EquivalenceReport::ZERO;
    for k in 0..instances {
        let mut rng = stream(seed, Domain::Verify, ITERATED + k as u64);
        let (logits, cfg) = random_instance(&mut rng, true, f_mode)?;
        let v = logits.continue_vocab();
        let indices: Vec<usize> = (0..steps)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    EXEC_TOKEN
                } else {
                    rng.gen_range(1..=v)
                }
            })
            .collect();
        worst = worst.worst(iterated_equivalence(&logits, &cfg, &indices)?);
    }
    Ok(IteratedSummary {
        instances,
        steps,
        f_mode,
        worst,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FScalingSummary {
    pub instances: usize,
    pub mean_ratio: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// Ratio of the Exact-vs-Zero one-step deviation at `η/2` to that at `η`,
/// over continue-token instances (the `f` term only exists there).
pub fn f_scaling_sweep(seed: u64, instances: usize) -> Result<FScalingSummary> {
    let mut ratios = Vec::with_capacity(instances);
    let mut k = 0u64;
    while ratios.len() < instances {
        let mut rng = stream(seed, Domain::Verify, F_SCALING + k);
        k += 1;
        let (logits, cfg) = random_instance(&mut rng, false, FMode::Exact)?;
        let full = f_mode_step_deviation(&logits, &cfg)?;
        if full == 0.0 {
            continue;
        }
        let half_cfg = UpdateConfig {
            eta: cfg.eta / 2.0,
            ..cfg
        };
        let half = f_mode_step_deviation(&logits, &half_cfg)?;
        ratios.push(half / full);
    }
    let n = ratios.len() as f64;
    Ok(FScalingSummary {
        instances: ratios.len(),
        mean_ratio: ratios.iter().sum::<f64>() / n,
        min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        max_ratio: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NaiveControlSummary {
    pub instances: usize,
    pub threshold: f64,
    pub above_threshold: usize,
    pub fraction_above: f64,
    pub min_deviation: f64,
}

/// Uncorrected implicit update vs the explicit update on instances with
/// `|A| ≥ min_abs_advantage`, both case families alternating.
pub fn naive_control_sweep(
    seed: u64,
    instances: usize,
    min_abs_advantage: f64,
    threshold: f64,
) -> Result<NaiveControlSummary> {
    let mut above = 0;
    let mut min_deviation = f64::INFINITY;
    for k in 0..instances {
        let mut rng = stream(seed, Domain::Verify, NAIVE + k as u64);
        let (logits, mut cfg) = random_instance(&mut rng, k % 2 == 0, FMode::Exact)?;
        let magnitude = rng.gen_range(min_abs_advantage..=3.0);
        cfg.advantage = if rng.gen_bool(0.5) { magnitude } else { -magnitude };
        let dev = naive_pair_update(&logits, &cfg)?.report.max_prob_deviation;
        if dev > threshold {
            above += 1;
        }
        min_deviation = min_deviation.min(dev);
    }
    Ok(NaiveControlSummary {
        instances,
        threshold,
        above_threshold: above,
        fraction_above: above as f64 / instances.max(1) as f64,
        min_deviation,
    })
}
