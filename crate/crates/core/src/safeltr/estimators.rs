//! Interaction-level counterfactual estimators.
//!
//! These follow the textbook sums over logged interactions and serve as the
//! reference the summary-based training objectives are checked against.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clicksim::{InteractionLog, PropensityEstimate};
use crate::dataset::RankingDataset;
use crate::error::{Error, Result};
use crate::policy::{ExaminationModel, ExposureProfile, GradientMode, StochasticRankingPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    ExposureIps,
    ActionIps,
    Dr,
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltrEstimate {
    pub utility: f64,
    /// Policy-dependent part of the risk, the part that is optimized.
    pub risk_term: f64,
    /// Policy-independent part of the bound, reported only.
    pub constant_term: f64,
    /// `utility - risk_term`.
    pub lower_bound: f64,
    pub divergence: f64,
    pub estimator_kind: EstimatorKind,
}

impl CltrEstimate {
    pub fn plain(estimator_kind: EstimatorKind, utility: f64) -> Self {
        Self { utility, risk_term: 0.0, constant_term: 0.0, lower_bound: utility, divergence: 0.0, estimator_kind }
    }

    /// Complete high-probability bound including the constant term.
    pub fn full_lower_bound(&self) -> f64 {
        self.lower_bound - self.constant_term
    }
}

/// Exposure profiles of `policy` for every query of `data`.
pub fn target_exposures<R: Rng + ?Sized>(
    policy: &StochasticRankingPolicy,
    data: &RankingDataset,
    model: &ExaminationModel,
    mode: GradientMode,
    rng: &mut R,
) -> Result<Vec<ExposureProfile>> {
    data.queries
        .iter()
        .map(|q| Ok(policy.ranking_set(q, mode, rng)?.exposure(q.documents.len(), model)))
        .collect()
}

/// Exact logging propensities, in the same shape as a log-based estimate.
pub fn exact_propensities(
    policy: &StochasticRankingPolicy,
    data: &RankingDataset,
    model: &ExaminationModel,
) -> Result<PropensityEstimate> {
    let mut rho = Vec::with_capacity(data.len());
    let mut omega = Vec::with_capacity(data.len());
    let mut rank_freq = Vec::with_capacity(data.len());
    for q in &data.queries {
        let set = policy.enumerate_probs(q)?;
        let prof = set.exposure(q.documents.len(), model);
        let mut freq = vec![vec![0.0; q.documents.len()]; policy.cutoff];
        for (r, w) in set.iter_rankings().zip(&set.weights) {
            for (k, &d) in r.iter().enumerate() {
                freq[k][d] += w;
            }
        }
        rho.push(Some(prof.rho));
        omega.push(Some(prof.omega));
        rank_freq.push(Some(freq));
    }
    Ok(PropensityEstimate { rho, omega, rank_freq, clip_floor: None })
}

fn check_log(log: &InteractionLog) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    Ok(log.len() as f64)
}

/// Policy-aware IPS: `(1/N) sum_i sum_d omega(d)/rho0(d) * (c_i(d) - beta_k)`.
/// Under a position-based model `beta = 0` and `omega = rho`.
pub fn ips_exposure(
    log: &InteractionLog,
    props: &PropensityEstimate,
    target: &[ExposureProfile],
    model: &ExaminationModel,
) -> Result<CltrEstimate> {
    let n = check_log(log)?;
    let mut total = 0.0;
    for e in &log.entries {
        let rho0 = props.rho(e.query)?;
        for (k, (&d, &c)) in e.ranking.iter().zip(&e.clicks).enumerate() {
            let corr = c as u8 as f64 - model.beta_at(k);
            if corr == 0.0 {
                continue;
            }
            if rho0[d] <= 0.0 {
                return Err(Error::ZeroPropensity { query: e.query, doc: d });
            }
            total += target[e.query].omega[d] / rho0[d] * corr;
        }
    }
    Ok(CltrEstimate::plain(EstimatorKind::ExposureIps, total / n))
}

/// Click counting with every propensity set to one.
pub fn naive_estimate(log: &InteractionLog, target: &[ExposureProfile]) -> Result<CltrEstimate> {
    let n = check_log(log)?;
    let total: f64 = log
        .entries
        .iter()
        .flat_map(|e| e.ranking.iter().zip(&e.clicks).filter(|(_, &c)| c).map(move |(&d, _)| target[e.query].rho[d]))
        .sum();
    Ok(CltrEstimate::plain(EstimatorKind::Naive, total / n))
}

/// Action-based IPS: `(1/N) sum_i pi(y_i)/pi0(y_i) * sum_d c_i(d)`.
pub fn ips_action(
    log: &InteractionLog,
    props: &PropensityEstimate,
    policy: &StochasticRankingPolicy,
    data: &RankingDataset,
) -> Result<CltrEstimate> {
    let n = check_log(log)?;
    let mut total = 0.0;
    for e in &log.entries {
        let clicks = e.clicks.iter().filter(|&&c| c).count() as f64;
        if clicks == 0.0 {
            continue;
        }
        let p0 = props.action_propensity(e.query, &e.ranking)?;
        if p0 <= 0.0 {
            return Err(Error::ZeroPropensity { query: e.query, doc: e.ranking[0] });
        }
        let p = policy.log_prob(&data.queries[e.query], &e.ranking)?.exp();
        total += p / p0 * clicks;
    }
    Ok(CltrEstimate::plain(EstimatorKind::ActionIps, total / n))
}

/// Doubly robust estimate: direct-method term plus an IPS correction of the
/// regression residuals.
pub fn dr_estimate(
    log: &InteractionLog,
    props: &PropensityEstimate,
    target: &[ExposureProfile],
    rhat: &[Vec<f64>],
    model: &ExaminationModel,
) -> Result<CltrEstimate> {
    let n = check_log(log)?;
    let mut total = 0.0;
    for e in &log.entries {
        let omega = &target[e.query].omega;
        let r = &rhat[e.query];
        total += omega.iter().zip(r).map(|(w, r)| w * r).sum::<f64>();
        let rho0 = props.rho(e.query)?;
        for (k, (&d, &c)) in e.ranking.iter().zip(&e.clicks).enumerate() {
            let resid = c as u8 as f64 - model.alpha_at(k) * r[d] - model.beta_at(k);
            if resid == 0.0 {
                continue;
            }
            if rho0[d] <= 0.0 {
                return Err(Error::ZeroPropensity { query: e.query, doc: d });
            }
            total += omega[d] / rho0[d] * resid;
        }
    }
    Ok(CltrEstimate::plain(EstimatorKind::Dr, total / n))
}

/// True utility `E_q sum_d omega(d) P(R|d)` under a uniform query distribution.
pub fn true_utility(target: &[ExposureProfile], relevance: &[Vec<f64>]) -> f64 {
    let total: f64 = target
        .iter()
        .zip(relevance)
        .map(|(t, r)| t.omega.iter().zip(r).map(|(w, r)| w * r).sum::<f64>())
        .sum();
    total / target.len() as f64
}
