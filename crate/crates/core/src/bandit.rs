//! Single-action contextual bandits: a synthetic environment with softmax
//! logging, IPS-family estimators, closed-form baselines, off-policy learning
//! and off-policy evaluation drivers.
//!
//! Contexts come from a finite pool drawn once per environment, so true policy
//! values are exact sums and per-context tables (`[context][action]`) can be
//! shared between rows of a log.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::optim::Adam;
use crate::stats::{mean, sigmoid, softmax, t_interval};
use crate::{derive_seed, rng_from_seed};

/// Per-context action probabilities or rewards, indexed `[context][action]`.
pub type ActionTable = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BanditConfig {
    pub n_actions: usize,
    pub context_dim: usize,
    /// Size of the context pool; contexts are drawn uniformly from it.
    pub n_contexts: usize,
    /// Logging policy is `softmax(inv_temp * q(x, .))`.
    pub inv_temp: f64,
    /// Multiplier on the reward logits; larger values push `q` towards 0 and 1.
    pub reward_scale: f64,
    pub seed: u64,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self { n_actions: 10, context_dim: 5, n_contexts: 1000, inv_temp: 1.0, reward_scale: 3.0, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct BanditEnvironment {
    contexts: Arc<Vec<Vec<f64>>>,
    expected: ActionTable,
    logging: ActionTable,
    logging_cdf: ActionTable,
    inv_temp: f64,
}

impl BanditEnvironment {
    /// Gaussian contexts, `q(x, a) = sigmoid(s (x . u_a / sqrt(d) + b_a))` with
    /// Gaussian `u_a, b_a` and `s = reward_scale`.
    pub fn generate(config: &BanditConfig) -> Result<Self> {
        if config.n_actions == 0 || config.context_dim == 0 || config.n_contexts == 0 {
            return Err(invalid("n_actions, context_dim and n_contexts must be positive"));
        }
        if !config.inv_temp.is_finite() {
            return Err(invalid("inverse temperature must be finite"));
        }
        let mut rng = rng_from_seed(config.seed);
        let d = config.context_dim;
        let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect() };
        let action_weights: Vec<Vec<f64>> = (0..config.n_actions).map(|_| normal(d)).collect();
        let action_bias = normal(config.n_actions);
        let contexts: Vec<Vec<f64>> = (0..config.n_contexts).map(|_| normal(d)).collect();
        let expected = contexts
            .iter()
            .map(|x| {
                action_weights
                    .iter()
                    .zip(&action_bias)
                    .map(|(u, b)| sigmoid(config.reward_scale * (crate::stats::dot(x, u) / (d as f64).sqrt() + b)))
                    .collect()
            })
            .collect::<ActionTable>();
        let logging = expected.iter().map(|q| softmax_logging(q, config.inv_temp)).collect();
        Self::from_tables(contexts, expected, logging, config.inv_temp)
    }

    /// Builds an environment from explicit tables; `logging` rows must be
    /// strictly positive and sum to one.
    pub fn from_tables(contexts: Vec<Vec<f64>>, expected: ActionTable, logging: ActionTable, inv_temp: f64) -> Result<Self> {
        if contexts.is_empty() || expected.len() != contexts.len() || logging.len() != contexts.len() {
            return Err(invalid("contexts, expected rewards and logging probabilities must have one row per context"));
        }
        let n_actions = expected[0].len();
        let dim = contexts[0].len();
        if n_actions == 0 {
            return Err(invalid("at least one action is required"));
        }
        for c in 0..contexts.len() {
            if contexts[c].len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: contexts[c].len() });
            }
            if expected[c].len() != n_actions || logging[c].len() != n_actions {
                return Err(Error::DimensionMismatch { expected: n_actions, found: expected[c].len().min(logging[c].len()) });
            }
            if expected[c].iter().any(|q| !(0.0..=1.0).contains(q)) {
                return Err(invalid("expected rewards must lie in [0, 1]"));
            }
            if logging[c].iter().any(|p| !(*p > 0.0)) || (logging[c].iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(invalid("logging probabilities must be positive and sum to one"));
            }
        }
        let logging_cdf = logging
            .iter()
            .map(|p| {
                let mut acc = 0.0;
                p.iter().map(|x| {
                    acc += x;
                    acc
                })
                .collect()
            })
            .collect();
        Ok(Self { contexts: Arc::new(contexts), expected, logging, logging_cdf, inv_temp })
    }

    /// Same contexts and rewards, logging policy at another inverse temperature.
    pub fn with_inv_temp(&self, inv_temp: f64) -> Result<Self> {
        let logging = self.expected.iter().map(|q| softmax_logging(q, inv_temp)).collect();
        Self::from_tables(self.contexts.as_ref().clone(), self.expected.clone(), logging, inv_temp)
    }

    pub fn n_actions(&self) -> usize {
        self.expected[0].len()
    }

    pub fn context_dim(&self) -> usize {
        self.contexts[0].len()
    }

    pub fn n_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn contexts(&self) -> &Arc<Vec<Vec<f64>>> {
        &self.contexts
    }

    pub fn expected_rewards(&self) -> &ActionTable {
        &self.expected
    }

    pub fn logging_probs(&self) -> &ActionTable {
        &self.logging
    }

    pub fn inv_temp(&self) -> f64 {
        self.inv_temp
    }

    /// Exact value `(1/M) sum_x sum_a pi(a|x) q(x, a)` of a probability table.
    pub fn true_value(&self, target: &[Vec<f64>]) -> f64 {
        let total: f64 = target.iter().zip(&self.expected).map(|(p, q)| crate::stats::dot(p, q)).sum();
        total / self.contexts.len() as f64
    }

    /// Draws `n` rows with Bernoulli rewards.
    pub fn simulate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> BanditLog {
        let m = self.contexts.len();
        let rows = (0..n)
            .map(|_| {
                let context = rng.random_range(0..m);
                let cdf = &self.logging_cdf[context];
                let u = rng.random::<f64>() * cdf[cdf.len() - 1];
                let action = cdf.partition_point(|c| *c <= u).min(cdf.len() - 1);
                let reward = if rng.random::<f64>() < self.expected[context][action] { 1.0 } else { 0.0 };
                BanditRow { context, action, propensity: self.logging[context][action], reward }
            })
            .collect();
        BanditLog { contexts: Arc::clone(&self.contexts), rows }
    }
}

fn softmax_logging(q: &[f64], inv_temp: f64) -> Vec<f64> {
    let scores: Vec<f64> = q.iter().map(|v| inv_temp * v).collect();
    // keep full support under extreme temperatures
    softmax(&scores).into_iter().map(|p| p.max(1e-300)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditRow {
    /// Index into the context pool.
    pub context: usize,
    pub action: usize,
    pub propensity: f64,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct BanditLog {
    contexts: Arc<Vec<Vec<f64>>>,
    rows: Vec<BanditRow>,
}

impl BanditLog {
    pub fn new(contexts: Arc<Vec<Vec<f64>>>, rows: Vec<BanditRow>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.context >= contexts.len() {
                return Err(invalid(format!("row {i} references unknown context {}", r.context)));
            }
            if !(r.propensity > 0.0 && r.propensity <= 1.0) {
                return Err(Error::ZeroPropensity { query: r.context, doc: r.action });
            }
        }
        Ok(Self { contexts, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[BanditRow] {
        &self.rows
    }

    pub fn contexts(&self) -> &Arc<Vec<Vec<f64>>> {
        &self.contexts
    }

    pub fn features(&self, row: usize) -> &[f64] {
        &self.contexts[self.rows[row].context]
    }

    pub fn mean_reward(&self) -> f64 {
        mean(&self.rows.iter().map(|r| r.reward).collect::<Vec<_>>())
    }

    /// Log restricted to the given rows, sharing the context pool.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self { contexts: Arc::clone(&self.contexts), rows: rows.iter().map(|&i| self.rows[i]).collect() }
    }

    /// Importance weights `pi(a|x) / pi0(a|x)`.
    pub fn weights(&self, target: &[Vec<f64>]) -> Result<Vec<f64>> {
        if self.rows.is_empty() {
            return Err(Error::EmptyLog);
        }
        if target.len() != self.contexts.len() {
            return Err(Error::DimensionMismatch { expected: self.contexts.len(), found: target.len() });
        }
        Ok(self.rows.iter().map(|r| target[r.context][r.action] / r.propensity).collect())
    }
}

/// Linear softmax policy without bias: `pi(a|x) = softmax(W x)_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub n_actions: usize,
    pub dim: usize,
    /// Row-major `n_actions x dim`.
    pub weights: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn zeros(n_actions: usize, dim: usize) -> Self {
        Self { n_actions, dim, weights: vec![0.0; n_actions * dim] }
    }

    pub fn from_weights(n_actions: usize, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != n_actions * dim {
            return Err(Error::DimensionMismatch { expected: n_actions * dim, found: weights.len() });
        }
        Ok(Self { n_actions, dim, weights })
    }

    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self.weights.chunks_exact(self.dim).map(|w| crate::stats::dot(w, x)).collect();
        softmax(&logits)
    }

    pub fn table(&self, contexts: &[Vec<f64>]) -> ActionTable {
        contexts.iter().map(|x| self.probs(x)).collect()
    }

    /// `||grad pi(a|x)||^2 = pi_a^2 ||x||^2 (1 - 2 pi_a + sum_b pi_b^2)`.
    pub fn grad_prob_sq_norm(probs: &[f64], action: usize, x: &[f64]) -> f64 {
        let pa = probs[action];
        let sq: f64 = probs.iter().map(|p| p * p).sum();
        let xx: f64 = x.iter().map(|v| v * v).sum();
        pa * pa * xx * (1.0 - 2.0 * pa + sq).max(0.0)
    }

    /// `grad pi(a|x)`: row `b` equals `pi_a (1[b = a] - pi_b) x`.
    pub fn grad_prob(&self, x: &[f64], action: usize) -> Vec<f64> {
        let p = self.probs(x);
        let mut g = vec![0.0; self.weights.len()];
        for b in 0..self.n_actions {
            let c = p[action] * (f64::from(u8::from(b == action)) - p[b]);
            for (j, xj) in x.iter().enumerate() {
                g[b * self.dim + j] = c * xj;
            }
        }
        g
    }
}

/// `pi(.|x)` table of the policy over the environment's context pool.
pub fn evaluate_true_value(policy: &SoftmaxPolicy, env: &BanditEnvironment) -> f64 {
    env.true_value(&policy.table(env.contexts()))
}

/// `(1/N) sum w r`.
pub fn ips_value(log: &BanditLog, target: &[Vec<f64>]) -> Result<f64> {
    beta_ips_value(log, target, 0.0)
}

/// `sum w r / sum w`.
pub fn snips_value(log: &BanditLog, target: &[Vec<f64>]) -> Result<f64> {
    let w = log.weights(target)?;
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(invalid("degenerate log: importance weights sum to zero"));
    }
    Ok(w.iter().zip(log.rows()).map(|(w, r)| w * r.reward).sum::<f64>() / total)
}

/// `beta + (1/N) sum w (r - beta)`.
pub fn beta_ips_value(log: &BanditLog, target: &[Vec<f64>], beta: f64) -> Result<f64> {
    let w = log.weights(target)?;
    let total: f64 = w.iter().zip(log.rows()).map(|(w, r)| w * (r.reward - beta)).sum();
    Ok(beta + total / w.len() as f64)
}

/// `(1/N) sum [w (r - rhat(x, a)) + sum_a' pi(a'|x) rhat(x, a')]`.
pub fn dr_value(log: &BanditLog, target: &[Vec<f64>], rhat: &[Vec<f64>]) -> Result<f64> {
    let w = log.weights(target)?;
    if rhat.len() != target.len() {
        return Err(Error::DimensionMismatch { expected: target.len(), found: rhat.len() });
    }
    let mut direct: Vec<Option<f64>> = vec![None; target.len()];
    let mut total = 0.0;
    for (w, r) in w.iter().zip(log.rows()) {
        let dm = *direct[r.context].get_or_insert_with(|| crate::stats::dot(&target[r.context], &rhat[r.context]));
        total += w * (r.reward - rhat[r.context][r.action]) + dm;
    }
    Ok(total / log.len() as f64)
}

/// `sum (w^2 - w) r / sum (w^2 - w)`, or `None` when the denominator is below
/// `1e-9 * sum w^2` (the target is numerically the logging policy).
pub fn optimal_beta_value(log: &BanditLog, target: &[Vec<f64>]) -> Result<Option<f64>> {
    let w = log.weights(target)?;
    let rewards: Vec<f64> = log.rows().iter().map(|r| r.reward).collect();
    Ok(optimal_beta_from_weights(&w, &rewards))
}

fn optimal_beta_from_weights(w: &[f64], rewards: &[f64]) -> Option<f64> {
    let (mut num, mut den, mut sq) = (0.0, 0.0, 0.0);
    for (w, r) in w.iter().zip(rewards) {
        num += (w * w - w) * r;
        den += w * w - w;
        sq += w * w;
    }
    if den.abs() < 1e-9 * sq || den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

/// Ridge regression of reward on `[x, 1]`, one model per action.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeRewardModel {
    pub dim: usize,
    /// Per action, `dim` weights followed by the intercept.
    pub coefficients: Vec<Vec<f64>>,
}

impl RidgeRewardModel {
    pub fn fit(log: &BanditLog, n_actions: usize, ridge: f64) -> Result<Self> {
        if log.is_empty() {
            return Err(Error::EmptyLog);
        }
        if !(ridge > 0.0) {
            return Err(invalid("ridge penalty must be positive"));
        }
        let dim = log.contexts()[0].len();
        let p = dim + 1;
        let mut xtx = vec![DMatrix::<f64>::zeros(p, p); n_actions];
        let mut xty = vec![DVector::<f64>::zeros(p); n_actions];
        let mut z = vec![1.0; p];
        for (i, r) in log.rows().iter().enumerate() {
            if r.action >= n_actions {
                return Err(invalid(format!("row {i} has action {} outside 0..{n_actions}", r.action)));
            }
            z[..dim].copy_from_slice(log.features(i));
            let (a, b) = (&mut xtx[r.action], &mut xty[r.action]);
            for j in 0..p {
                b[j] += z[j] * r.reward;
                for k in 0..p {
                    a[(j, k)] += z[j] * z[k];
                }
            }
        }
        let coefficients = xtx
            .into_iter()
            .zip(xty)
            .map(|(mut a, b)| {
                for j in 0..p {
                    a[(j, j)] += ridge;
                }
                a.cholesky().map(|c| c.solve(&b).iter().copied().collect()).ok_or(Error::NonFinite("ridge solve"))
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(Self { dim, coefficients })
    }

    pub fn predict(&self, x: &[f64], action: usize) -> f64 {
        let c = &self.coefficients[action];
        crate::stats::dot(&c[..self.dim], x) + c[self.dim]
    }

    pub fn table(&self, contexts: &[Vec<f64>]) -> ActionTable {
        contexts.iter().map(|x| (0..self.coefficients.len()).map(|a| self.predict(x, a)).collect()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BaselineKind {
    None,
    Fixed { lambda: f64 },
    /// `sum (||grad pi||^2 / pi0^2) r / sum ||grad pi||^2 / pi0^2` over the batch.
    OptimalGradient,
    /// [`optimal_beta_value`] over the batch, falling back to the mean reward.
    OptimalValue,
    MeanReward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// Gradient of the value estimate with respect to the policy weights.
    pub gradient: Vec<f64>,
    /// Baseline that was applied; for SNIPS the self-normalized value.
    pub beta: f64,
    /// Empirical variance `(1/B) sum ||g_i||^2 - ||mean g||^2` of the per-row terms.
    pub variance: f64,
}

/// Per-row terms `g_i = c_i (e_a - pi) x` of a score-function gradient.
struct RowTerms {
    probs: Vec<Vec<f64>>,
    /// `pi(a|x) / pi0(a|x)`.
    w: Vec<f64>,
    /// `||grad pi(a|x)||^2 / pi0^2`.
    grad_sq: Vec<f64>,
}

fn row_terms(log: &BanditLog, batch: &[usize], policy: &SoftmaxPolicy) -> RowTerms {
    let mut probs = Vec::with_capacity(batch.len());
    let mut w = Vec::with_capacity(batch.len());
    let mut grad_sq = Vec::with_capacity(batch.len());
    for &i in batch {
        let r = &log.rows()[i];
        let x = log.features(i);
        let p = policy.probs(x);
        w.push(p[r.action] / r.propensity);
        grad_sq.push(SoftmaxPolicy::grad_prob_sq_norm(&p, r.action, x) / (r.propensity * r.propensity));
        probs.push(p);
    }
    RowTerms { probs, w, grad_sq }
}

/// Mean of `(grad pi / pi0) * adv_i` over the batch, plus the empirical variance of the terms.
fn assemble(log: &BanditLog, batch: &[usize], policy: &SoftmaxPolicy, terms: &RowTerms, adv: &[f64], scale: f64) -> (Vec<f64>, f64) {
    let mut g = vec![0.0; policy.weights.len()];
    let mut second = 0.0;
    for (k, &i) in batch.iter().enumerate() {
        let r = &log.rows()[i];
        let x = log.features(i);
        let c = terms.w[k] * adv[k] * scale;
        if c == 0.0 {
            continue;
        }
        let p = &terms.probs[k];
        for b in 0..policy.n_actions {
            let cb = c * (f64::from(u8::from(b == r.action)) - p[b]);
            let row = &mut g[b * policy.dim..(b + 1) * policy.dim];
            for (gj, xj) in row.iter_mut().zip(x) {
                *gj += cb * xj;
            }
        }
        second += terms.grad_sq[k] * (adv[k] * scale).powi(2);
    }
    let n = batch.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    let mean_sq: f64 = g.iter().map(|v| v * v).sum();
    (g, (second / n - mean_sq).max(0.0))
}

/// Monte Carlo gradient `(1/B) sum (grad pi / pi0) (r - beta)` of the
/// baseline-corrected IPS estimate over the rows in `batch`.
pub fn policy_gradient(log: &BanditLog, batch: &[usize], policy: &SoftmaxPolicy, baseline: BaselineKind) -> Result<GradientEstimate> {
    if batch.is_empty() {
        return Err(Error::EmptyLog);
    }
    let terms = row_terms(log, batch, policy);
    let rewards: Vec<f64> = batch.iter().map(|&i| log.rows()[i].reward).collect();
    let beta = match baseline {
        BaselineKind::None => 0.0,
        BaselineKind::Fixed { lambda } => lambda,
        BaselineKind::MeanReward => mean(&rewards),
        BaselineKind::OptimalGradient => {
            let den: f64 = terms.grad_sq.iter().sum();
            if den > 0.0 {
                terms.grad_sq.iter().zip(&rewards).map(|(g, r)| g * r).sum::<f64>() / den
            } else {
                mean(&rewards)
            }
        }
        BaselineKind::OptimalValue => optimal_beta_from_weights(&terms.w, &rewards).unwrap_or_else(|| mean(&rewards)),
    };
    let adv: Vec<f64> = rewards.iter().map(|r| r - beta).collect();
    let (gradient, variance) = assemble(log, batch, policy, &terms, &adv, 1.0);
    Ok(GradientEstimate { gradient, beta, variance })
}

/// Empirical gradient variance of the baseline-corrected IPS gradient at a given `beta`.
pub fn gradient_variance_at(log: &BanditLog, batch: &[usize], policy: &SoftmaxPolicy, beta: f64) -> Result<f64> {
    Ok(policy_gradient(log, batch, policy, BaselineKind::Fixed { lambda: beta })?.variance)
}

/// Quotient-rule gradient of the SNIPS value over the whole log:
/// `sum_i sum_j grad w_i w_j (r_i - r_j) / (sum w)^2`, evaluated in linear time.
pub fn snips_fullbatch_gradient(log: &BanditLog, policy: &SoftmaxPolicy) -> Result<GradientEstimate> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    let batch: Vec<usize> = (0..log.len()).collect();
    let terms = row_terms(log, &batch, policy);
    let total: f64 = terms.w.iter().sum();
    if !(total > 0.0) {
        return Err(invalid("degenerate log: importance weights sum to zero"));
    }
    let value = terms.w.iter().zip(log.rows()).map(|(w, r)| w * r.reward).sum::<f64>() / total;
    let adv: Vec<f64> = log.rows().iter().map(|r| r.reward - value).collect();
    let scale = log.len() as f64 / total;
    let (gradient, variance) = assemble(log, &batch, policy, &terms, &adv, scale);
    Ok(GradientEstimate { gradient, beta: value, variance })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum OplMethod {
    Ips,
    /// Fixed reward translation `lambda`.
    BanditNet { lambda: f64 },
    /// Gradient-variance-optimal baseline per batch.
    BetaIpsGradient,
    /// Value-variance-optimal baseline per batch.
    BetaIpsValue,
    /// Full batch only.
    Snips,
}

impl OplMethod {
    pub fn name(&self) -> String {
        match self {
            Self::Ips => "ips".into(),
            Self::BanditNet { lambda } => format!("banditnet_{lambda}"),
            Self::BetaIpsGradient => "beta_ips_gradient".into(),
            Self::BetaIpsValue => "beta_ips_value".into(),
            Self::Snips => "snips".into(),
        }
    }

    fn baseline(&self) -> Option<BaselineKind> {
        match self {
            Self::Ips => Some(BaselineKind::None),
            Self::BanditNet { lambda } => Some(BaselineKind::Fixed { lambda: *lambda }),
            Self::BetaIpsGradient => Some(BaselineKind::OptimalGradient),
            Self::BetaIpsValue => Some(BaselineKind::OptimalValue),
            Self::Snips => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BatchSchedule {
    FullBatch,
    MiniBatch { batch_size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OplConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning rate at epoch `t` is `learning_rate / (1 + lr_decay * t)`.
    pub lr_decay: f64,
    pub schedule: BatchSchedule,
    pub seed: u64,
}

impl Default for OplConfig {
    fn default() -> Self {
        Self { epochs: 50, learning_rate: 0.05, lr_decay: 0.0, schedule: BatchSchedule::MiniBatch { batch_size: 1024 }, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OplTraceRow {
    pub epoch: usize,
    pub method: String,
    /// True value of the policy after the epoch.
    pub value: f64,
    /// Mean per-batch gradient variance during the epoch.
    pub grad_variance: f64,
}

#[derive(Debug, Clone)]
pub struct OplOutcome {
    pub policy: SoftmaxPolicy,
    pub trace: Vec<OplTraceRow>,
    pub final_value: f64,
}

impl OplOutcome {
    pub fn mean_grad_variance(&self) -> f64 {
        mean(&self.trace.iter().map(|r| r.grad_variance).collect::<Vec<_>>())
    }
}

/// Trains a zero-initialized softmax policy on `log` and tracks its true value.
pub fn train_opl(env: &BanditEnvironment, log: &BanditLog, method: OplMethod, config: &OplConfig) -> Result<OplOutcome> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    if !(config.learning_rate > 0.0) || config.lr_decay < 0.0 {
        return Err(invalid("learning rate must be positive and decay non-negative"));
    }
    let batch_size = match config.schedule {
        BatchSchedule::FullBatch => log.len(),
        BatchSchedule::MiniBatch { batch_size } => {
            if batch_size == 0 {
                return Err(invalid("batch size must be positive"));
            }
            if method == OplMethod::Snips && batch_size < log.len() {
                return Err(invalid("the SNIPS gradient is only defined on the full batch"));
            }
            batch_size.min(log.len())
        }
    };
    let mut policy = SoftmaxPolicy::zeros(env.n_actions(), env.context_dim());
    let mut adam = Adam::new(policy.weights.len());
    let mut rng = rng_from_seed(config.seed);
    let mut order: Vec<usize> = (0..log.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if batch_size < log.len() {
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        }
        let lr = config.learning_rate / (1.0 + config.lr_decay * epoch as f64);
        let mut variances = Vec::new();
        for batch in order.chunks(batch_size) {
            let est = match method.baseline() {
                Some(b) => policy_gradient(log, batch, &policy, b)?,
                None => snips_fullbatch_gradient(log, &policy)?,
            };
            if est.gradient.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite("policy gradient"));
            }
            adam.ascend(&mut policy.weights, &est.gradient, lr);
            variances.push(est.variance);
        }
        trace.push(OplTraceRow {
            epoch,
            method: method.name(),
            value: evaluate_true_value(&policy, env),
            grad_variance: mean(&variances),
        });
    }
    let final_value = evaluate_true_value(&policy, env);
    Ok(OplOutcome { policy, trace, final_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpeEstimator {
    Ips,
    Snips,
    Dr,
    BetaIps,
}

impl OpeEstimator {
    pub const ALL: [OpeEstimator; 4] = [Self::Ips, Self::Snips, Self::Dr, Self::BetaIps];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ips => "ips",
            Self::Snips => "snips",
            Self::Dr => "dr",
            Self::BetaIps => "beta_ips",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpeConfig {
    pub ns: Vec<usize>,
    pub inv_temps: Vec<f64>,
    pub repetitions: usize,
    /// Ridge penalty of the DR reward model.
    pub ridge: f64,
    pub ci_level: f64,
    pub seed: u64,
}

impl Default for OpeConfig {
    fn default() -> Self {
        Self { ns: vec![1_000, 10_000, 100_000], inv_temps: vec![-5.0, 5.0], repetitions: 100, ridge: 1.0, ci_level: 0.8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeRow {
    pub estimator: String,
    pub n_actions: usize,
    pub inv_temp: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub mse: f64,
    pub variance: f64,
    pub bias: f64,
    /// Interval for the MSE at the configured level.
    pub ci_low: f64,
    pub ci_high: f64,
}

/// One estimate on one log; the DR reward model is refitted on `log`.
pub fn ope_estimate(log: &BanditLog, target: &[Vec<f64>], estimator: OpeEstimator, n_actions: usize, ridge: f64) -> Result<f64> {
    match estimator {
        OpeEstimator::Ips => ips_value(log, target),
        OpeEstimator::Snips => snips_value(log, target),
        OpeEstimator::Dr => {
            let rhat = RidgeRewardModel::fit(log, n_actions, ridge)?.table(log.contexts());
            dr_value(log, target, &rhat)
        }
        OpeEstimator::BetaIps => {
            let beta = optimal_beta_value(log, target)?.unwrap_or_else(|| log.mean_reward());
            beta_ips_value(log, target, beta)
        }
    }
}

/// All four estimates on one log.
pub fn ope_estimates(log: &BanditLog, target: &[Vec<f64>], n_actions: usize, ridge: f64) -> Result<[(OpeEstimator, f64); 4]> {
    let mut out = [(OpeEstimator::Ips, 0.0); 4];
    for (slot, est) in out.iter_mut().zip(OpeEstimator::ALL) {
        *slot = (est, ope_estimate(log, target, est, n_actions, ridge)?);
    }
    Ok(out)
}

/// MSE of each estimator against the exact value of `target`, over fresh logs
/// for every `(inverse temperature, N)` cell.
pub fn ope_experiment(env: &BanditEnvironment, target: &SoftmaxPolicy, config: &OpeConfig) -> Result<Vec<OpeRow>> {
    if config.repetitions < 2 {
        return Err(invalid("at least two repetitions are required"));
    }
    if config.ns.is_empty() || config.inv_temps.is_empty() || config.ns.contains(&0) {
        return Err(invalid("N and temperature grids must be non-empty and positive"));
    }
    let table = target.table(env.contexts());
    let truth = env.true_value(&table);
    let mut out = Vec::new();
    for (ti, &temp) in config.inv_temps.iter().enumerate() {
        let cell_env = env.with_inv_temp(temp)?;
        for &n in &config.ns {
            let mut errors: Vec<Vec<f64>> = vec![Vec::with_capacity(config.repetitions); 4];
            for rep in 0..config.repetitions {
                let seed = derive_seed(derive_seed(derive_seed(config.seed, ti as u64), n as u64), rep as u64);
                let log = cell_env.simulate(n, &mut rng_from_seed(seed));
                for (k, (_, v)) in ope_estimates(&log, &table, env.n_actions(), config.ridge)?.iter().enumerate() {
                    errors[k].push(v - truth);
                }
            }
            for (k, est) in OpeEstimator::ALL.iter().enumerate() {
                let e = &errors[k];
                let sq: Vec<f64> = e.iter().map(|x| x * x).collect();
                let ci = t_interval(&sq, config.ci_level);
                out.push(OpeRow {
                    estimator: est.name().to_string(),
                    n_actions: env.n_actions(),
                    inv_temp: temp,
                    n,
                    mse: ci.mean,
                    variance: crate::stats::sample_variance(e),
                    bias: mean(e),
                    ci_low: ci.low,
                    ci_high: ci.high,
                });
            }
        }
    }
    Ok(out)
}

/// Target policy for evaluation: IPS-trained softmax policy on a uniformly logged sample.
pub fn fit_target_policy(env: &BanditEnvironment, n: usize, config: &OplConfig) -> Result<SoftmaxPolicy> {
    let uniform = env.with_inv_temp(0.0)?;
    let log = uniform.simulate(n, &mut rng_from_seed(derive_seed(config.seed, 1)));
    Ok(train_opl(&uniform, &log, OplMethod::Ips, config)?.policy)
}
