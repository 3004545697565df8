//! Central finite differences against the analytical loss gradients.

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::policy::{explicit_from_implicit, ImplicitLogits};
use crate::rng::{stream, Domain};
use crate::surrogate::{
    explicit_pg_gradient, explicit_pg_loss, naive_implicit_gradient, naive_implicit_loss,
    surrogate_gradient_frozen, surrogate_loss_frozen, surrogate_quantities, FMode, GradientVector,
    UpdateConfig,
};
use crate::verify::random_instance;

/// Central-difference step for O(1) logits in double precision.
pub const FD_STEP: f64 = 1e-5;

/// `(f(x + h e_k) − f(x − h e_k)) / 2h` for every coordinate.
pub fn central_difference<F>(x: &[f64], h: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let plus = f(&probe)?;
        probe[k] = x[k] - h;
        let minus = f(&probe)?;
        probe[k] = x[k];
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// `|a − n| / max(|a|, |n|, 1)`: relative for large components, absolute
/// below unit scale where an exact zero makes a pure ratio meaningless.
pub fn relative_error(analytical: f64, numerical: f64) -> f64 {
    (analytical - numerical).abs() / analytical.abs().max(numerical.abs()).max(1.0)
}

pub fn max_relative_error(analytical: &[f64], numerical: &[f64]) -> f64 {
    analytical
        .iter()
        .zip(numerical)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientErrors {
    pub explicit_pg: f64,
    pub naive_implicit: f64,
    pub surrogate: f64,
}

impl GradientErrors {
    pub fn max(&self) -> f64 {
        self.explicit_pg.max(self.naive_implicit).max(self.surrogate)
    }
}

/// Optional analytical-gradient corruption for negative-control runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Injection {
    pub sign_flip: bool,
}

impl Injection {
    fn apply(&self, g: GradientVector) -> Vec<f64> {
        if self.sign_flip {
            g.0.into_iter().map(|x| -x).collect()
        } else {
            g.0
        }
    }
}

/// Compares all three analytical gradients with central differences at one
/// instance. The surrogate loss is differentiated with `γ`, `f` frozen at
/// `logits`.
pub fn check_instance(
    logits: &ImplicitLogits,
    cfg: &UpdateConfig,
    injection: Injection,
) -> Result<GradientErrors> {
    let params = explicit_from_implicit(logits);
    let analytic = injection.apply(explicit_pg_gradient(&params, cfg)?);
    let numeric = central_difference(&params.to_flat(), FD_STEP, |x| {
        explicit_pg_loss(&crate::policy::ExplicitParams::from_flat(x)?, cfg)
    })?;
    let explicit_pg = max_relative_error(&analytic, &numeric);

    let analytic = injection.apply(naive_implicit_gradient(logits, cfg)?);
    let numeric = central_difference(logits.values(), FD_STEP, |x| {
        naive_implicit_loss(&ImplicitLogits::new(x.to_vec())?, cfg)
    })?;
    let naive_implicit = max_relative_error(&analytic, &numeric);

    let frozen = surrogate_quantities(logits, cfg)?;
    let analytic = injection.apply(surrogate_gradient_frozen(logits, cfg, &frozen)?);
    let numeric = central_difference(logits.values(), FD_STEP, |x| {
        surrogate_loss_frozen(&ImplicitLogits::new(x.to_vec())?, cfg, &frozen)
    })?;
    let surrogate = max_relative_error(&analytic, &numeric);

    Ok(GradientErrors {
        explicit_pg,
        naive_implicit,
        surrogate,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckSummary {
    pub instances: usize,
    pub seed: u64,
    pub worst: GradientErrors,
    pub worst_instance: Option<GradcheckInstance>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckInstance {
    pub beta: Vec<f64>,
    pub eta: f64,
    pub advantage: f64,
    pub sampled_index: usize,
    pub max_error: f64,
}

/// Gradient check over `instances` random instances drawn with the verify
/// distribution, alternating execution-token and continue-token samples.
pub fn sweep(seed: u64, instances: usize, injection: Injection) -> Result<GradcheckSummary> {
    let mut worst = GradientErrors {
        explicit_pg: 0.0,
        naive_implicit: 0.0,
        surrogate: 0.0,
    };
    let mut worst_instance: Option<GradcheckInstance> = None;
    for k in 0..instances {
        let mut rng = stream(seed, Domain::Gradcheck, k as u64);
        let exec_case = k % 2 == 0;
        let (logits, mut cfg) = random_instance(&mut rng, exec_case, FMode::Exact)?;
        if rng.gen_bool(0.5) {
            cfg.f_mode = FMode::Zero;
        }
        let errs = check_instance(&logits, &cfg, injection)?;
        worst = GradientErrors {
            explicit_pg: worst.explicit_pg.max(errs.explicit_pg),
            naive_implicit: worst.naive_implicit.max(errs.naive_implicit),
            surrogate: worst.surrogate.max(errs.surrogate),
        };
        if worst_instance.as_ref().is_none_or(|w| errs.max() > w.max_error) {
            worst_instance = Some(GradcheckInstance {
                beta: logits.values().to_vec(),
                eta: cfg.eta,
                advantage: cfg.advantage,
                sampled_index: cfg.sampled_index,
                max_error: errs.max(),
            });
        }
    }
    Ok(GradcheckSummary {
        instances,
        seed,
        worst,
        worst_instance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_quadratic() {
        let g = central_difference(&[1.0, -2.0], 1e-5, |x| Ok(x[0] * x[0] + 3.0 * x[1])).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-9);
        assert!((g[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn sign_flip_is_caught() {
        let b = ImplicitLogits::new(vec![0.2, 0.9, -0.4]).unwrap();
        let cfg = UpdateConfig::new(0.05, 1.3, 1, FMode::Exact).unwrap();
        assert!(check_instance(&b, &cfg, Injection::default()).unwrap().max() < 1e-6);
        let bad = check_instance(&b, &cfg, Injection { sign_flip: true }).unwrap();
        assert!(bad.max() > 1e-2);
    }

    #[test]
    fn zero_advantage_passes() {
        let b = ImplicitLogits::new(vec![0.2, 0.9, -0.4]).unwrap();
        let cfg = UpdateConfig::new(0.05, 0.0, 2, FMode::Exact).unwrap();
        assert_eq!(check_instance(&b, &cfg, Injection::default()).unwrap().max(), 0.0);
    }
}
