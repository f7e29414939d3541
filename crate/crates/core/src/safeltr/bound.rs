//! Exposure divergences and Cantelli-style generalization bounds.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::safeltr::estimators::{CltrEstimate, EstimatorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyMode {
    CrmExposure,
    CrmAction,
    SafeDr,
    Prpo,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyConfig {
    pub delta: f64,
    /// Normalizer of the exposure (or metric-weight) distribution.
    pub z: f64,
    /// `max_k beta_k / alpha_k`; zero under a position-based model.
    pub beta_alpha_max: f64,
    pub mode: SafetyMode,
}

impl SafetyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!("delta must lie strictly inside (0, 1), got {}", self.delta)));
        }
        if !(self.z > 0.0) || self.beta_alpha_max < 0.0 {
            return Err(invalid("Z must be positive and the beta/alpha ratio non-negative"));
        }
        Ok(())
    }

    /// `(1 - delta) / delta`.
    pub fn confidence_factor(&self) -> f64 {
        (1.0 - self.delta) / self.delta
    }

    /// Multiplier applied to both bound terms: `1 + max beta/alpha` for safe DR.
    pub fn multiplier(&self) -> f64 {
        match self.mode {
            SafetyMode::SafeDr => 1.0 + self.beta_alpha_max,
            _ => 1.0,
        }
    }

    fn z_scale(&self) -> f64 {
        match self.mode {
            SafetyMode::SafeDr => 2.0 * self.z,
            _ => self.z,
        }
    }

    /// Policy-dependent risk `m * sqrt(c Z / N * f * d2)`.
    pub fn risk(&self, n: f64, divergence: f64) -> f64 {
        match self.mode {
            SafetyMode::None | SafetyMode::Prpo => 0.0,
            _ => self.multiplier() * (self.z_scale() / n * self.confidence_factor() * divergence).sqrt(),
        }
    }

    /// Derivative of [`Self::risk`] with respect to the divergence; zero at `d2 = 0`.
    pub fn risk_slope(&self, n: f64, divergence: f64) -> f64 {
        if divergence <= 0.0 {
            return 0.0;
        }
        match self.mode {
            SafetyMode::None | SafetyMode::Prpo => 0.0,
            _ => self.multiplier() * (self.z_scale() * self.confidence_factor() / (4.0 * n * divergence)).sqrt(),
        }
    }

    /// Policy-independent term `m * sqrt(f / N)`.
    pub fn constant_term(&self, n: f64) -> f64 {
        match self.mode {
            SafetyMode::None | SafetyMode::Prpo => 0.0,
            _ => self.multiplier() * (self.confidence_factor() / n).sqrt(),
        }
    }
}

/// Combines an estimate with its divergence into a high-probability lower bound.
pub fn crm_lower_bound(
    utility: f64,
    divergence: f64,
    n: usize,
    config: &SafetyConfig,
    kind: EstimatorKind,
) -> Result<CltrEstimate> {
    config.validate()?;
    if n == 0 {
        return Err(Error::EmptyLog);
    }
    let risk_term = config.risk(n as f64, divergence);
    Ok(CltrEstimate {
        utility,
        risk_term,
        constant_term: config.constant_term(n as f64),
        lower_bound: utility - risk_term,
        divergence,
        estimator_kind: kind,
    })
}

/// Second-order Renyi divergence `sum_d p0(d) (p(d)/p0(d))^2` between two
/// exposure profiles, each normalized by its own total.
pub fn divergence(target: &[f64], logging: &[f64]) -> Result<f64> {
    let st: f64 = target.iter().sum();
    let s0: f64 = logging.iter().sum();
    if st <= 0.0 || s0 <= 0.0 {
        return Err(invalid("exposure profiles must have positive mass"));
    }
    let mut total = 0.0;
    for (d, (t, l)) in target.iter().zip(logging).enumerate() {
        let (p, p0) = (t / st, l / s0);
        if p0 <= 0.0 {
            if p > 0.0 {
                return Err(Error::InfiniteDivergence { query: usize::MAX, doc: d });
            }
            continue;
        }
        total += p * p / p0;
    }
    Ok(total)
}

/// Empirical divergence `(1/N) sum_i d2(q_i)` over the queries of a log.
pub fn empirical_divergence(target: &[Vec<f64>], logging: &[Vec<f64>], logged_queries: &[usize]) -> Result<f64> {
    if logged_queries.is_empty() {
        return Err(Error::EmptyLog);
    }
    let mut cache: Vec<Option<f64>> = vec![None; target.len()];
    let mut total = 0.0;
    for &q in logged_queries {
        let v = match cache[q] {
            Some(v) => v,
            None => {
                let v = divergence(&target[q], &logging[q]).map_err(|e| match e {
                    Error::InfiniteDivergence { doc, .. } => Error::InfiniteDivergence { query: q, doc },
                    other => other,
                })?;
                cache[q] = Some(v);
                v
            }
        };
        total += v;
    }
    Ok(total / logged_queries.len() as f64)
}
