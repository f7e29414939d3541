//! Proximal ranking policy optimization: clipped metric-weight ratios.

use serde::{Deserialize, Serialize};

use crate::clicksim::LogSummary;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PrpoSchedule {
    /// `delta(N) = value`.
    Constant { value: f64 },
    /// `delta(N) = scale / N`.
    LinearInN { scale: f64 },
    /// `delta(N) = 1 / ln N`.
    LogInN,
    /// Explicit bounds, independent of N.
    Fixed { eps_minus: f64, eps_plus: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrpoConfig {
    pub eps_minus: f64,
    pub eps_plus: f64,
}

impl PrpoConfig {
    pub fn new(eps_minus: f64, eps_plus: f64) -> Result<Self> {
        if !(eps_minus >= 0.0) || eps_minus > eps_plus {
            return Err(invalid(format!("need 0 <= eps_minus <= eps_plus, got ({eps_minus}, {eps_plus})")));
        }
        Ok(Self { eps_minus, eps_plus })
    }
}

/// Clip bounds for a log of size `n`: `eps_minus = min(delta(N), 1)`, `eps_plus = 1 / eps_minus`.
pub fn prpo_schedule(n: usize, schedule: PrpoSchedule) -> Result<PrpoConfig> {
    if n == 0 {
        return Err(invalid("N must be at least 1"));
    }
    let n = n as f64;
    let delta = match schedule {
        PrpoSchedule::Fixed { eps_minus, eps_plus } => return PrpoConfig::new(eps_minus, eps_plus),
        PrpoSchedule::Constant { value } => value,
        PrpoSchedule::LinearInN { scale } => scale / n,
        PrpoSchedule::LogInN => {
            if n <= std::f64::consts::E {
                1.0
            } else {
                1.0 / n.ln()
            }
        }
    };
    if !(delta > 0.0) {
        return Err(invalid(format!("schedule produced non-positive delta {delta}")));
    }
    let eps_minus = delta.min(1.0);
    PrpoConfig::new(eps_minus, 1.0 / eps_minus)
}

/// `min(x, eps_plus) * r` for `r >= 0`, `max(x, eps_minus) * r` otherwise.
#[inline]
pub fn prpo_clip(x: f64, config: &PrpoConfig, r: f64) -> f64 {
    if r >= 0.0 {
        x.min(config.eps_plus) * r
    } else {
        x.max(config.eps_minus) * r
    }
}

/// Whether the gradient of the clipped term passes through at ratio `x`.
/// At the bound itself the clipped branch wins, so `eps = 1` never leaves the logging policy.
#[inline]
pub fn prpo_active(x: f64, config: &PrpoConfig, r: f64) -> bool {
    (r > 0.0 && x < config.eps_plus) || (r < 0.0 && x > config.eps_minus)
}

/// `sum_d f(omega/omega0, r)` for one query.
pub fn prpo_objective(omega: &[f64], omega0: &[f64], rewards: &[f64], config: &PrpoConfig) -> Result<f64> {
    let mut total = 0.0;
    for ((w, w0), r) in omega.iter().zip(omega0).zip(rewards) {
        if *r == 0.0 {
            continue;
        }
        if *w0 <= 0.0 {
            return Err(invalid("logging metric weight must be positive for scored documents"));
        }
        total += prpo_clip(w / w0, config, *r);
    }
    Ok(total)
}

/// Per-document rewards `r(d|q)` such that `sum_{q,d} (omega/omega0) r` is the
/// doubly robust estimate:
/// `r = (n_q omega0 Rhat + (omega0/rho0) sum_{i in q} (c - alpha_k Rhat - beta_k)) / N`.
pub fn prpo_rewards(summary: &LogSummary, rho0: &[Vec<f64>], omega0: &[Vec<f64>], rhat: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = summary.n_total.max(1) as f64;
    summary
        .queries
        .iter()
        .enumerate()
        .map(|(q, s)| {
            if s.n == 0 {
                return vec![0.0; s.clicks.len()];
            }
            (0..s.clicks.len())
                .map(|d| {
                    let resid = s.clicks[d] - rhat[q][d] * s.alpha_sum[d] - s.beta_sum[d];
                    let corr = if rho0[q][d] > 0.0 { omega0[q][d] / rho0[q][d] * resid } else { 0.0 };
                    (s.n as f64 * omega0[q][d] * rhat[q][d] + corr) / n
                })
                .collect()
        })
        .collect()
}
