//! Relevance regression models used by the doubly robust estimators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clicksim::LogSummary;
use crate::dataset::{RankingDataset, RelevanceTransform};
use crate::error::{invalid, Result};
use crate::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum RegressionSource {
    /// True relevance probabilities.
    Oracle,
    /// True relevance plus Gaussian noise, clipped to [0, 1].
    NoisyOracle { noise: f64, seed: u64 },
    Constant { value: f64 },
    /// Weighted ridge regression of bias-corrected click rates on features.
    Learned { ridge: f64 },
}

/// A fitted predictor of `P(R = 1 | q, d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RegressionModel {
    Oracle(RelevanceTransform),
    NoisyOracle { transform: RelevanceTransform, noise: f64, seed: u64 },
    Constant(f64),
    Linear { weights: Vec<f64>, bias: f64 },
}

impl RegressionModel {
    /// Builds the model; `Learned` is fitted on `summary` over `train`.
    pub fn fit(source: &RegressionSource, transform: RelevanceTransform, train: &RankingDataset, summary: &LogSummary) -> Result<Self> {
        Ok(match source {
            RegressionSource::Oracle => Self::Oracle(transform),
            RegressionSource::NoisyOracle { noise, seed } => {
                if *noise < 0.0 {
                    return Err(invalid("noise level must be non-negative"));
                }
                Self::NoisyOracle { transform, noise: *noise, seed: *seed }
            }
            RegressionSource::Constant { value } => {
                if !(0.0..=1.0).contains(value) {
                    return Err(invalid(format!("constant prediction {value} outside [0, 1]")));
                }
                Self::Constant(*value)
            }
            RegressionSource::Learned { ridge } => fit_linear(train, summary, *ridge)?,
        })
    }

    /// Predictions for every document of every query, each in [0, 1].
    pub fn predict_dataset(&self, data: &RankingDataset) -> Vec<Vec<f64>> {
        data.queries
            .iter()
            .map(|q| {
                q.documents
                    .iter()
                    .enumerate()
                    .map(|(d, doc)| match self {
                        Self::Oracle(t) => t.prob(doc.grade),
                        Self::NoisyOracle { transform, noise, seed } => {
                            let mut rng = rng_from_seed(derive_seed(*seed, q.query_id.wrapping_mul(1 << 20) + d as u64));
                            let z: f64 = rng.sample(StandardNormal);
                            (transform.prob(doc.grade) + noise * z).clamp(0.0, 1.0)
                        }
                        Self::Constant(c) => *c,
                        Self::Linear { weights, bias } => (crate::stats::dot(weights, &doc.features) + bias).clamp(0.0, 1.0),
                    })
                    .collect()
            })
            .collect()
    }
}

/// Targets are `(clicks - beta mass) / alpha mass` per displayed (query, doc),
/// weighted by the alpha mass so that rarely examined documents count less.
fn fit_linear(train: &RankingDataset, summary: &LogSummary, ridge: f64) -> Result<RegressionModel> {
    if ridge < 0.0 {
        return Err(invalid("ridge penalty must be non-negative"));
    }
    let dim = train.feature_dim + 1;
    let mut xtx = DMatrix::<f64>::zeros(dim, dim);
    let mut xty = DVector::<f64>::zeros(dim);
    let mut total_weight = 0.0;
    for (q, stats) in summary.queries.iter().enumerate() {
        if stats.n == 0 {
            continue;
        }
        for (d, doc) in train.queries[q].documents.iter().enumerate() {
            let a = stats.alpha_sum[d];
            if a <= 0.0 {
                continue;
            }
            let target = (stats.clicks[d] - stats.beta_sum[d]) / a;
            let mut x = doc.features.clone();
            x.push(1.0);
            let x = DVector::from_vec(x);
            xtx += a * &x * x.transpose();
            xty += a * target * &x;
            total_weight += a;
        }
    }
    if total_weight == 0.0 {
        return Ok(RegressionModel::Constant(0.5));
    }
    for i in 0..dim - 1 {
        xtx[(i, i)] += ridge * total_weight;
    }
    xtx[(dim - 1, dim - 1)] += 1e-9 * total_weight;
    let solution = xtx
        .cholesky()
        .map(|c| c.solve(&xty))
        .ok_or_else(|| invalid("regression normal equations are singular"))?;
    Ok(RegressionModel::Linear { weights: solution.rows(0, dim - 1).iter().copied().collect(), bias: solution[dim - 1] })
}
