//! Gradient-ascent training of Plackett-Luce rankers from click logs.
//!
//! Every exposure-based objective is linear in the target policy's exposure
//! `rho` and metric weight `omega`, apart from the square-root risk and the
//! PRPO clip. Per query the objective gradient is therefore the score-function
//! gradient of `f(y) = sum_k alpha_k a(y_k) + (alpha_k + beta_k) b(y_k)` for
//! coefficient vectors `a`, `b` computed from the log summary.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clicksim::{estimate_propensities, ClickModel, LogSummary, PropensityEstimate};
use crate::dataset::{DatasetSplits, RankingDataset};
use crate::error::{invalid, Error, Result};
use crate::policy::{mean_policy_ndcg, ExaminationModel, GradientMode, RankingSet, StochasticRankingPolicy};
use crate::rng_from_seed;
use crate::safeltr::bound::{SafetyConfig, SafetyMode};
use crate::safeltr::estimators::target_exposures;
use crate::safeltr::prpo::{prpo_active, prpo_clip, prpo_rewards, prpo_schedule, PrpoConfig, PrpoSchedule};
use crate::safeltr::regression::{RegressionModel, RegressionSource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum SafeLtrMethod {
    Naive,
    ExposureIps,
    ExposureCrm { delta: f64 },
    ActionIps,
    ActionCrm { lambda: f64 },
    Dr,
    SafeDr { delta: f64 },
    Prpo { schedule: PrpoSchedule },
}

impl SafeLtrMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Naive => "naive",
            Self::ExposureIps => "exposure_ips",
            Self::ExposureCrm { .. } => "exposure_crm",
            Self::ActionIps => "action_ips",
            Self::ActionCrm { .. } => "action_crm",
            Self::Dr => "dr",
            Self::SafeDr { .. } => "safe_dr",
            Self::Prpo { .. } => "prpo",
        }
    }

    /// The unpenalized estimator whose validation value drives early stopping.
    fn base(&self) -> Self {
        match self {
            Self::Naive => Self::Naive,
            Self::ExposureIps | Self::ExposureCrm { .. } => Self::ExposureIps,
            Self::ActionIps | Self::ActionCrm { .. } => Self::ActionIps,
            Self::Dr | Self::SafeDr { .. } | Self::Prpo { .. } => Self::Dr,
        }
    }

    fn uses_omega(&self) -> bool {
        matches!(self, Self::Dr | Self::SafeDr { .. } | Self::Prpo { .. })
    }

    fn needs_regression(&self) -> bool {
        self.uses_omega()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Step at epoch t is `learning_rate / (1 + lr_decay * t)`.
    pub lr_decay: f64,
    pub gradient_mode: GradientMode,
    /// How test NDCG and validation estimates are computed.
    pub eval_mode: GradientMode,
    /// Clip training propensities at `10 / sqrt(N)`.
    pub clip_propensities: bool,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
    pub regression: RegressionSource,
    pub init: PolicyInit,
    pub validation: ValidationMetric,
    pub seed: u64,
}

/// What early stopping maximizes on the validation log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMetric {
    /// The method's own objective, including its risk or clipping.
    #[default]
    Objective,
    /// The underlying unpenalized estimator.
    Estimate,
}

/// Starting point of optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyInit {
    /// Logging weights for the risk-aware methods (CRM, safe DR, PRPO), whose
    /// penalties are centred on the logging policy; zero weights otherwise.
    #[default]
    Auto,
    /// All-zero weights: the uniform Plackett-Luce policy.
    Zero,
    /// The logging policy's weights.
    Logging,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1.0,
            lr_decay: 0.0,
            gradient_mode: GradientMode::Exact,
            eval_mode: GradientMode::Exact,
            clip_propensities: true,
            patience: None,
            regression: RegressionSource::Learned { ridge: 1e-3 },
            init: PolicyInit::Auto,
            validation: ValidationMetric::Objective,
            seed: 0,
        }
    }
}

pub struct TrainingInput<'a> {
    pub splits: &'a DatasetSplits,
    pub logging: &'a StochasticRankingPolicy,
    pub click_model: &'a ClickModel,
    pub train_log: &'a LogSummary,
    pub validation_log: &'a LogSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub objective: f64,
    pub estimate: f64,
    pub risk: f64,
    pub divergence: f64,
    pub ndcg_test: f64,
    pub ndcg_logging: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: StochasticRankingPolicy,
    pub trace: Vec<TraceRow>,
    pub best_epoch: usize,
    pub logging_ndcg: f64,
    pub test_ndcg: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub objective: f64,
    pub estimate: f64,
    pub risk: f64,
    pub divergence: f64,
    pub grad: Vec<f64>,
}

/// Everything about a log that the objectives need, precomputed once.
pub struct ObjectiveContext<'a> {
    data: &'a RankingDataset,
    summary: &'a LogSummary,
    exam: ExaminationModel,
    props: PropensityEstimate,
    /// Possibly clipped, for inverse weighting.
    rho0: Vec<Vec<f64>>,
    rho0_div: Vec<Vec<f64>>,
    omega0_div: Vec<Vec<f64>>,
    rhat: Vec<Vec<f64>>,
    prpo: Option<(PrpoConfig, Vec<Vec<f64>>)>,
    /// Denominator of the PRPO ratio: the unclipped logged weights, zero for
    /// never-displayed documents, unless anchored.
    prpo_anchor: Vec<Vec<f64>>,
    logged: Vec<usize>,
    n: f64,
    action_floor: f64,
}

impl<'a> ObjectiveContext<'a> {
    /// With `training` and `clip` set, IPS propensities are clipped at
    /// `10 / sqrt(N)`. Divergences use unclipped estimates in which documents
    /// never displayed for a logged query count as less than one display at
    /// the last rank.
    pub fn new(
        data: &'a RankingDataset,
        summary: &'a LogSummary,
        rhat: Vec<Vec<f64>>,
        method: &SafeLtrMethod,
        training: bool,
        clip: bool,
    ) -> Result<Self> {
        if summary.queries.len() != data.queries.len() {
            return Err(invalid("log summary and dataset disagree on the number of queries"));
        }
        let exam = summary.examination.clone();
        let props = estimate_propensities(summary, training && clip);
        let raw = estimate_propensities(summary, false);
        let floor = if summary.n_total > 0 { crate::clicksim::clip_floor(summary.n_total).min(1.0) } else { 1.0 };
        let last = exam.cutoff().saturating_sub(1);
        let unwrap = |v: &Option<Vec<f64>>, len: usize, unseen: f64| -> Vec<f64> {
            match v {
                Some(v) => v.iter().map(|&x| if x > 0.0 { x } else { unseen }).collect(),
                None => vec![0.0; len],
            }
        };
        let per_query = |est: &[Option<Vec<f64>>], unseen: &dyn Fn(usize) -> f64| -> Vec<Vec<f64>> {
            est.iter().zip(&data.queries).enumerate().map(|(q, (r, qr))| unwrap(r, qr.documents.len(), unseen(q))).collect()
        };
        let n_q = |q: usize| summary.queries[q].n as f64 + 1.0;
        let rho0 = per_query(&props.rho, &|_| 0.0);
        let omega0 = per_query(&raw.omega, &|_| 0.0);
        let rho0_div = per_query(&raw.rho, &|q| exam.alpha_at(last) / n_q(q));
        let omega0_div = per_query(&raw.omega, &|q| exam.omega_at(last) / n_q(q));
        let prpo = match method {
            SafeLtrMethod::Prpo { schedule } if summary.n_total > 0 => {
                let cfg = prpo_schedule(summary.n_total, *schedule)?;
                Some((cfg, prpo_rewards(summary, &rho0, &omega0, &rhat)))
            }
            _ => None,
        };
        Ok(Self {
            data,
            summary,
            exam,
            logged: summary.logged_queries().collect(),
            n: summary.n_total as f64,
            action_floor: if training && clip { floor } else { 0.0 },
            props,
            rho0,
            prpo_anchor: omega0,
            rho0_div,
            omega0_div,
            rhat,
            prpo,
        })
    }

    pub fn n(&self) -> usize {
        self.summary.n_total
    }

    /// Measures PRPO ratios against known logging metric weights `omega0`
    /// instead of the weights observed in the log. Rewards are rescaled so the
    /// unclipped objective is still the doubly robust estimate.
    pub fn anchor_prpo(mut self, omega0: Vec<Vec<f64>>) -> Result<Self> {
        if omega0.len() != self.data.queries.len()
            || omega0.iter().zip(&self.data.queries).any(|(w, q)| w.len() != q.documents.len())
        {
            return Err(invalid("anchor weights do not match the dataset"));
        }
        if let Some((_, rewards)) = &mut self.prpo {
            *rewards = prpo_rewards(self.summary, &self.rho0, &omega0, &self.rhat);
        }
        self.prpo_anchor = omega0;
        Ok(self)
    }

    /// Objective value, its parts and (optionally) its gradient.
    pub fn evaluate<R: Rng + ?Sized>(
        &self,
        method: &SafeLtrMethod,
        policy: &StochasticRankingPolicy,
        mode: GradientMode,
        with_grad: bool,
        rng: &mut R,
    ) -> Result<Evaluation> {
        if self.logged.is_empty() {
            return Err(Error::EmptyLog);
        }
        match method {
            SafeLtrMethod::ActionIps => self.evaluate_action(policy, 0.0, with_grad),
            SafeLtrMethod::ActionCrm { lambda } => self.evaluate_action(policy, *lambda, with_grad),
            _ => self.evaluate_exposure(method, policy, mode, with_grad, rng),
        }
    }

    fn safety(&self, method: &SafeLtrMethod) -> Option<SafetyConfig> {
        let k = self.exam.cutoff();
        match method {
            SafeLtrMethod::ExposureCrm { delta } => Some(SafetyConfig {
                delta: *delta,
                z: self.exam.exposure_total(k),
                beta_alpha_max: 0.0,
                mode: SafetyMode::CrmExposure,
            }),
            SafeLtrMethod::SafeDr { delta } => Some(SafetyConfig {
                delta: *delta,
                z: self.exam.weight_total(k),
                beta_alpha_max: self.exam.max_beta_ratio(),
                mode: SafetyMode::SafeDr,
            }),
            _ => None,
        }
    }

    fn evaluate_exposure<R: Rng + ?Sized>(
        &self,
        method: &SafeLtrMethod,
        policy: &StochasticRankingPolicy,
        mode: GradientMode,
        with_grad: bool,
        rng: &mut R,
    ) -> Result<Evaluation> {
        let safety = self.safety(method);
        if let Some(s) = &safety {
            s.validate()?;
        }
        let uses_omega = method.uses_omega();
        let n = self.n;

        struct Q {
            q: usize,
            set: RankingSet,
            rho: Vec<f64>,
            omega: Vec<f64>,
        }
        let mut per_query = Vec::with_capacity(self.logged.len());
        for &q in &self.logged {
            let query = &self.data.queries[q];
            let set = if with_grad { policy.ranking_set(query, mode, rng)? } else { policy.ranking_probs(query, mode, rng)? };
            let prof = set.exposure(query.documents.len(), &self.exam);
            per_query.push(Q { q, set, rho: prof.rho, omega: prof.omega });
        }

        // Linear estimate and its coefficients on rho (a) and omega (b).
        let mut estimate = 0.0;
        let mut coef: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(per_query.len());
        for item in &per_query {
            let s = &self.summary.queries[item.q];
            let nd = s.clicks.len();
            let mut a = vec![0.0; nd];
            let mut b = vec![0.0; nd];
            for d in 0..nd {
                let rho0 = self.rho0[item.q][d];
                match method.base() {
                    SafeLtrMethod::Naive => a[d] = s.clicks[d] / n,
                    SafeLtrMethod::ExposureIps => {
                        let corr = s.clicks[d] - s.beta_sum[d];
                        b[d] = if rho0 > 0.0 { corr / (n * rho0) } else { 0.0 };
                    }
                    _ => {
                        let r = self.rhat[item.q][d];
                        let resid = s.clicks[d] - r * s.alpha_sum[d] - s.beta_sum[d];
                        let corr = if rho0 > 0.0 { resid / rho0 } else { 0.0 };
                        b[d] = (s.n as f64 * r + corr) / n;
                    }
                }
                estimate += a[d] * item.rho[d] + b[d] * item.omega[d];
            }
            coef.push((a, b));
        }

        // Divergence of the relevant exposure, weighted by query frequency.
        let mut divergence = 0.0;
        let mut div_coef: Vec<Vec<f64>> = Vec::with_capacity(per_query.len());
        let mut finite = true;
        for item in &per_query {
            let s = &self.summary.queries[item.q];
            let (p, p0) = if uses_omega { (&item.omega, &self.omega0_div[item.q]) } else { (&item.rho, &self.rho0_div[item.q]) };
            let st: f64 = p.iter().sum();
            let s0: f64 = p0.iter().sum();
            let weight = s.n as f64 / n;
            let mut dq = 0.0;
            let mut grad_coef = vec![0.0; p.len()];
            for d in 0..p.len() {
                if p0[d] <= 0.0 {
                    if p[d] > 0.0 {
                        finite = false;
                    }
                    continue;
                }
                dq += s0 / (st * st) * p[d] * p[d] / p0[d];
                grad_coef[d] = weight * s0 / (st * st) * 2.0 * p[d] / p0[d];
            }
            divergence += weight * dq;
            div_coef.push(grad_coef);
        }
        if !finite {
            divergence = f64::INFINITY;
        }

        let mut objective = estimate;
        let mut risk = 0.0;
        let mut risk_slope = 0.0;
        if let Some(s) = &safety {
            if !finite {
                return Err(Error::InfiniteDivergence { query: usize::MAX, doc: usize::MAX });
            }
            risk = s.risk(n, divergence);
            risk_slope = s.risk_slope(n, divergence);
            objective = estimate - risk;
        }
        if let Some((cfg, rewards)) = &self.prpo {
            if matches!(method, SafeLtrMethod::Prpo { .. }) {
                objective = 0.0;
                for (item, (_, b)) in per_query.iter().zip(coef.iter_mut()) {
                    for d in 0..b.len() {
                        let r = rewards[item.q][d];
                        let w0 = self.prpo_anchor[item.q][d];
                        if r == 0.0 || w0 <= 0.0 {
                            b[d] = 0.0;
                            continue;
                        }
                        let x = item.omega[d] / w0;
                        objective += prpo_clip(x, cfg, r);
                        b[d] = if prpo_active(x, cfg, r) { r / w0 } else { 0.0 };
                    }
                }
            }
        }

        let mut grad = vec![0.0; policy.feature_dim()];
        if with_grad {
            for ((item, (a, b)), dc) in per_query.iter().zip(coef.iter_mut()).zip(&div_coef) {
                if risk_slope != 0.0 {
                    let target = if uses_omega { &mut *b } else { &mut *a };
                    for (t, c) in target.iter_mut().zip(dc) {
                        *t -= risk_slope * c;
                    }
                }
                let exam = &self.exam;
                let g = item.set.gradient(|y| {
                    y.iter()
                        .enumerate()
                        .map(|(k, &d)| exam.alpha_at(k) * a[d] + exam.omega_at(k) * b[d])
                        .sum()
                });
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += gi;
                }
            }
        }
        Ok(Evaluation { objective, estimate, risk, divergence, grad })
    }

    fn evaluate_action(&self, policy: &StochasticRankingPolicy, lambda: f64, with_grad: bool) -> Result<Evaluation> {
        let n = self.n;
        let dim = policy.feature_dim();
        let mut mean = 0.0;
        let mut sq = 0.0;
        let mut grad_mean = vec![0.0; dim];
        let mut grad_sq = vec![0.0; dim];
        for &q in &self.logged {
            let query = &self.data.queries[q];
            for (ranking, stats) in &self.summary.queries[q].actions {
                let p0 = self.props.action_propensity(q, ranking)?.max(self.action_floor);
                if p0 <= 0.0 {
                    return Err(Error::ZeroPropensity { query: q, doc: ranking[0] });
                }
                let w = policy.log_prob(query, ranking)?.exp() / p0;
                mean += w * stats.click_sum / n;
                sq += w * w * stats.click_sq_sum;
                if with_grad && (stats.click_sum > 0.0) {
                    let g = policy.grad_log_prob(query, ranking)?;
                    for ((gm, gs), gi) in grad_mean.iter_mut().zip(grad_sq.iter_mut()).zip(&g) {
                        *gm += w * stats.click_sum / n * gi;
                        *gs += 2.0 * w * w * stats.click_sq_sum * gi;
                    }
                }
            }
        }
        let var = if n > 1.0 { ((sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        let risk = lambda * (var / n).sqrt();
        let mut grad = grad_mean.clone();
        if with_grad && lambda > 0.0 && var > 0.0 && n > 1.0 {
            for ((g, gs), gm) in grad.iter_mut().zip(&grad_sq).zip(&grad_mean) {
                let dvar = (gs - 2.0 * n * mean * gm) / (n - 1.0);
                *g -= lambda * dvar / (2.0 * (n * var).sqrt());
            }
        }
        Ok(Evaluation { objective: mean - risk, estimate: mean, risk, divergence: f64::NAN, grad })
    }
}

fn ndcg<R: Rng + ?Sized>(policy: &StochasticRankingPolicy, data: &RankingDataset, mode: GradientMode, rng: &mut R) -> Result<f64> {
    mean_policy_ndcg(policy, &data.queries, policy.cutoff, mode, rng)
}

/// Trains a policy from `config.init` by full-batch gradient ascent, with per-epoch
/// validation and optional early stopping. The returned policy is the one
/// with the best validation estimate.
pub fn train(method: &SafeLtrMethod, input: &TrainingInput<'_>, config: &TrainConfig) -> Result<TrainOutcome> {
    if input.logging.cutoff != input.click_model.cutoff() {
        return Err(invalid("logging policy and click model disagree on the cutoff"));
    }
    if input.train_log.n_total == 0 {
        return Err(Error::EmptyLog);
    }
    let mut rng = rng_from_seed(config.seed);
    let splits = input.splits;
    let regression = if method.needs_regression() {
        RegressionModel::fit(&config.regression, input.click_model.transform, &splits.train, input.train_log)?
    } else {
        RegressionModel::Constant(0.0)
    };
    let anchor = |data: &RankingDataset| -> Result<Vec<Vec<f64>>> {
        let exam = &input.click_model.examination;
        let mut rng = rng_from_seed(0);
        Ok(target_exposures(input.logging, data, exam, GradientMode::Exact, &mut rng)?.into_iter().map(|p| p.omega).collect())
    };
    let is_prpo = matches!(method, SafeLtrMethod::Prpo { .. });
    let mut train_ctx = ObjectiveContext::new(
        &splits.train,
        input.train_log,
        regression.predict_dataset(&splits.train),
        method,
        true,
        config.clip_propensities,
    )?;
    if is_prpo {
        train_ctx = train_ctx.anchor_prpo(anchor(&splits.train)?)?;
    }
    let val_method = match config.validation {
        ValidationMetric::Objective => *method,
        ValidationMetric::Estimate => method.base(),
    };
    let val_ctx = if input.validation_log.n_total > 0 {
        Some(ObjectiveContext::new(
            &splits.validation,
            input.validation_log,
            regression.predict_dataset(&splits.validation),
            &val_method,
            false,
            false,
        )
        .and_then(|c| if is_prpo && matches!(val_method, SafeLtrMethod::Prpo { .. }) { c.anchor_prpo(anchor(&splits.validation)?) } else { Ok(c) })?)
    } else {
        None
    };

    let logging_ndcg = ndcg(input.logging, &splits.test, config.eval_mode, &mut rng)?;
    let init = match (config.init, method) {
        (
            PolicyInit::Auto,
            SafeLtrMethod::ExposureCrm { .. } | SafeLtrMethod::ActionCrm { .. } | SafeLtrMethod::SafeDr { .. } | SafeLtrMethod::Prpo { .. },
        ) => PolicyInit::Logging,
        (PolicyInit::Auto, _) => PolicyInit::Zero,
        (other, _) => other,
    };
    let mut policy = match init {
        PolicyInit::Logging => input.logging.clone(),
        PolicyInit::Auto | PolicyInit::Zero => StochasticRankingPolicy { weights: vec![0.0; input.logging.feature_dim()], ..input.logging.clone() },
    };
    let mut best = (f64::NEG_INFINITY, policy.clone(), 0usize, logging_ndcg);
    let mut since_best = 0usize;
    let mut trace = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..=config.epochs {
        let last = epoch == config.epochs;
        let ev = train_ctx.evaluate(method, &policy, config.gradient_mode, !last, &mut rng)?;
        let ndcg_test = ndcg(&policy, &splits.test, config.eval_mode, &mut rng)?;
        trace.push(TraceRow {
            epoch,
            n: input.train_log.n_total,
            objective: ev.objective,
            estimate: ev.estimate,
            risk: ev.risk,
            divergence: ev.divergence,
            ndcg_test,
            ndcg_logging: logging_ndcg,
        });
        let val = match &val_ctx {
            Some(ctx) => ctx.evaluate(&val_method, &policy, config.eval_mode, false, &mut rng)?.objective,
            None => epoch as f64,
        };
        if val > best.0 {
            best = (val, policy.clone(), epoch, ndcg_test);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if last || config.patience.is_some_and(|p| since_best >= p) {
            break;
        }
        let lr = config.learning_rate / (1.0 + config.lr_decay * epoch as f64);
        for (w, g) in policy.weights.iter_mut().zip(&ev.grad) {
            *w += lr * g;
        }
        if policy.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("policy weights diverged during training"));
        }
    }
    Ok(TrainOutcome { policy: best.1, trace, best_epoch: best.2, logging_ndcg, test_ndcg: best.3 })
}
