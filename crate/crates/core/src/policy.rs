//! Plackett-Luce ranking policies over top-K prefixes.
//!
//! Scores are linear in the document features and divided by a temperature.
//! Rankings are drawn by sequential softmax sampling without replacement, so
//! log-probabilities and their gradients are available in closed form. Small
//! queries (at most [`MAX_ENUM_DOCS`] candidates) can be enumerated exactly,
//! which the estimators use as an oracle and for noise-free training.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::QueryRecord;
use crate::error::{invalid, Error, Result};
use crate::stats::{dot, log_sum_exp};

/// Largest candidate set for which exact enumeration is permitted.
pub const MAX_ENUM_DOCS: usize = 8;

const CHECKPOINT_HEADER: &str = "cltrlab-policy";
const CHECKPOINT_VERSION: u32 = 1;

// ── Examination ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExaminationKind {
    Pbm,
    TrustBias,
    Custom,
}

/// Per-rank examination (`alpha`) and trust (`beta`) parameters. Ranks beyond
/// `alpha.len()` are never examined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExaminationModel {
    pub kind: ExaminationKind,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ExaminationModel {
    pub fn defaults(kind: ExaminationKind) -> Self {
        match kind {
            ExaminationKind::Pbm | ExaminationKind::Custom => Self::pbm(5),
            ExaminationKind::TrustBias => Self::trust_bias(),
        }
    }

    /// Position-based model with `alpha_k = (1/k)^2`.
    pub fn pbm(cutoff: usize) -> Self {
        let alpha = (1..=cutoff).map(|k| 1.0 / (k * k) as f64).collect();
        Self { kind: ExaminationKind::Pbm, alpha, beta: vec![0.0; cutoff] }
    }

    pub fn trust_bias() -> Self {
        Self {
            kind: ExaminationKind::TrustBias,
            alpha: vec![0.35, 0.53, 0.55, 0.54, 0.52],
            beta: vec![0.65, 0.26, 0.15, 0.11, 0.08],
        }
    }

    /// DCG-style weights `1/log2(k+1)` with no trust component.
    pub fn dcg(cutoff: usize) -> Self {
        let alpha = (1..=cutoff).map(|k| 1.0 / ((k + 1) as f64).log2()).collect();
        Self { kind: ExaminationKind::Custom, alpha, beta: vec![0.0; cutoff] }
    }

    pub fn custom(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        let model = Self { kind: ExaminationKind::Custom, alpha, beta };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() || self.alpha.len() != self.beta.len() {
            return Err(invalid("alpha and beta must be non-empty and equally long"));
        }
        for (a, b) in self.alpha.iter().zip(&self.beta) {
            let ok = (0.0..=1.0).contains(a) && (0.0..=1.0).contains(b) && a + b <= 1.0 + 1e-12;
            if !ok {
                return Err(invalid(format!("examination parameters out of range: alpha={a}, beta={b}")));
            }
        }
        Ok(())
    }

    pub fn cutoff(&self) -> usize {
        self.alpha.len()
    }

    /// Examination probability at a zero-based rank.
    #[inline]
    pub fn alpha_at(&self, rank: usize) -> f64 {
        self.alpha.get(rank).copied().unwrap_or(0.0)
    }

    #[inline]
    pub fn beta_at(&self, rank: usize) -> f64 {
        self.beta.get(rank).copied().unwrap_or(0.0)
    }

    /// Metric weight `alpha + beta` at a zero-based rank.
    #[inline]
    pub fn omega_at(&self, rank: usize) -> f64 {
        self.alpha_at(rank) + self.beta_at(rank)
    }

    /// Total exposure `Z = sum_k alpha_k` over the first `k` ranks.
    pub fn exposure_total(&self, k: usize) -> f64 {
        self.alpha.iter().take(k).sum()
    }

    /// Total metric weight `sum_k (alpha_k + beta_k)` over the first `k` ranks.
    pub fn weight_total(&self, k: usize) -> f64 {
        (0..k.min(self.cutoff())).map(|r| self.omega_at(r)).sum()
    }

    /// `max_k beta_k / alpha_k`, zero for position-based models.
    pub fn max_beta_ratio(&self) -> f64 {
        self.alpha
            .iter()
            .zip(&self.beta)
            .filter(|(_, b)| **b > 0.0)
            .map(|(a, b)| if *a > 0.0 { b / a } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }
}

pub fn examination_defaults(kind: ExaminationKind) -> ExaminationModel {
    ExaminationModel::defaults(kind)
}

// ── Policy ───────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticRankingPolicy {
    pub weights: Vec<f64>,
    pub cutoff: usize,
    pub temperature: f64,
}

impl StochasticRankingPolicy {
    pub fn new(feature_dim: usize, cutoff: usize) -> Self {
        Self { weights: vec![0.0; feature_dim], cutoff, temperature: 1.0 }
    }

    pub fn with_weights(weights: Vec<f64>, cutoff: usize, temperature: f64) -> Result<Self> {
        let policy = Self { weights, cutoff, temperature };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cutoff == 0 {
            return Err(invalid("cutoff must be positive"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("policy weights"));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.len()
    }

    fn check_query(&self, query: &QueryRecord) -> Result<()> {
        let n = query.documents.len();
        if n < self.cutoff {
            return Err(invalid(format!(
                "query {} has {n} documents, fewer than the cutoff {}",
                query.query_id, self.cutoff
            )));
        }
        if let Some(doc) = query.documents.iter().find(|d| d.features.len() != self.weights.len()) {
            return Err(Error::DimensionMismatch { expected: self.weights.len(), found: doc.features.len() });
        }
        Ok(())
    }

    /// Tempered scores `w.x / temperature` for every candidate document.
    pub fn scores(&self, query: &QueryRecord) -> Result<Vec<f64>> {
        self.check_query(query)?;
        Ok(self.raw_scores(query))
    }

    pub(crate) fn raw_scores(&self, query: &QueryRecord) -> Vec<f64> {
        query.documents.iter().map(|d| dot(&self.weights, &d.features) / self.temperature).collect()
    }

    pub fn sample_ranking<R: Rng + ?Sized>(&self, query: &QueryRecord, rng: &mut R) -> Result<Vec<usize>> {
        self.check_query(query)?;
        Ok(sample_from_scores(&self.raw_scores(query), self.cutoff, rng))
    }

    fn check_ranking(&self, query: &QueryRecord, ranking: &[usize]) -> Result<()> {
        self.check_query(query)?;
        let n = query.documents.len();
        if ranking.len() != self.cutoff {
            return Err(invalid(format!("ranking has length {}, expected {}", ranking.len(), self.cutoff)));
        }
        let mut seen = vec![false; n];
        for &d in ranking {
            if d >= n || seen[d] {
                return Err(invalid(format!("ranking {ranking:?} is not a prefix of distinct documents")));
            }
            seen[d] = true;
        }
        Ok(())
    }

    pub fn log_prob(&self, query: &QueryRecord, ranking: &[usize]) -> Result<f64> {
        self.check_ranking(query, ranking)?;
        let scores = self.raw_scores(query);
        let mut remaining: Vec<usize> = (0..scores.len()).collect();
        let mut total = 0.0;
        for &d in ranking {
            let rem_scores: Vec<f64> = remaining.iter().map(|&i| scores[i]).collect();
            total += scores[d] - log_sum_exp(&rem_scores);
            remaining.retain(|&i| i != d);
        }
        Ok(total)
    }

    pub fn grad_log_prob(&self, query: &QueryRecord, ranking: &[usize]) -> Result<Vec<f64>> {
        self.check_ranking(query, ranking)?;
        let scores = self.raw_scores(query);
        let mut grad = vec![0.0; self.weights.len()];
        let mut remaining: Vec<usize> = (0..scores.len()).collect();
        for &d in ranking {
            self.add_step_gradient(query, &scores, &remaining, d, 1.0, &mut grad);
            remaining.retain(|&i| i != d);
        }
        Ok(grad)
    }

    /// Adds `scale * (x_d - E_softmax(remaining)[x]) / temperature` to `grad`.
    fn add_step_gradient(
        &self,
        query: &QueryRecord,
        scores: &[f64],
        remaining: &[usize],
        chosen: usize,
        scale: f64,
        grad: &mut [f64],
    ) {
        let probs = remaining_softmax(scores, remaining);
        let inv_t = scale / self.temperature;
        for (g, x) in grad.iter_mut().zip(&query.documents[chosen].features) {
            *g += inv_t * x;
        }
        for (&i, p) in remaining.iter().zip(&probs) {
            for (g, x) in grad.iter_mut().zip(&query.documents[i].features) {
                *g -= inv_t * p * x;
            }
        }
    }

    /// Every top-K prefix with its probability and score-function gradient.
    pub fn enumerate(&self, query: &QueryRecord) -> Result<RankingSet> {
        self.enumerate_with(query, true)
    }

    /// Every top-K prefix with its probability, without gradients.
    pub fn enumerate_probs(&self, query: &QueryRecord) -> Result<RankingSet> {
        self.enumerate_with(query, false)
    }

    fn enumerate_with(&self, query: &QueryRecord, with_grads: bool) -> Result<RankingSet> {
        self.check_query(query)?;
        let n = query.documents.len();
        if n > MAX_ENUM_DOCS {
            return Err(invalid(format!("exact enumeration limited to {MAX_ENUM_DOCS} documents, query has {n}")));
        }
        let dim = if with_grads { self.weights.len() } else { 0 };
        let scores = self.raw_scores(query);
        let leaves: usize = (n + 1 - self.cutoff..=n).product();
        let mut out = RankingSet::empty(true, self.cutoff, dim);
        out.rankings.reserve(leaves * self.cutoff);
        out.weights.reserve(leaves);
        out.grads.reserve(leaves * dim);
        let mut e = Enumerator {
            features: query.documents.iter().map(|d| d.features.as_slice()).collect(),
            exp_scores: {
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                scores.iter().map(|s| (s - max).exp()).collect()
            },
            scores,
            cutoff: self.cutoff,
            dim,
            inv_t: 1.0 / self.temperature,
            prefix: Vec::with_capacity(self.cutoff),
            grad_stack: vec![0.0; (self.cutoff + 1) * dim],
            mean_stack: vec![0.0; self.cutoff * dim],
            out,
        };
        e.run(0, 0, 1.0);
        Ok(e.out)
    }

    /// `n_samples` independent rankings with their score-function gradients.
    pub fn sample_set<R: Rng + ?Sized>(&self, query: &QueryRecord, n_samples: usize, rng: &mut R) -> Result<RankingSet> {
        self.sample_set_with(query, n_samples, true, rng)
    }

    fn sample_set_with<R: Rng + ?Sized>(
        &self,
        query: &QueryRecord,
        n_samples: usize,
        with_grads: bool,
        rng: &mut R,
    ) -> Result<RankingSet> {
        self.check_query(query)?;
        if n_samples == 0 {
            return Err(invalid("n_samples must be positive"));
        }
        let scores = self.raw_scores(query);
        let dim = if with_grads { self.weights.len() } else { 0 };
        let mut set = RankingSet::empty(false, self.cutoff, dim);
        let mut grad = vec![0.0; dim];
        for _ in 0..n_samples {
            let ranking = sample_from_scores(&scores, self.cutoff, rng);
            if with_grads {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let mut remaining: Vec<usize> = (0..scores.len()).collect();
                for &d in &ranking {
                    self.add_step_gradient(query, &scores, &remaining, d, 1.0, &mut grad);
                    remaining.retain(|&i| i != d);
                }
                set.grads.extend_from_slice(&grad);
            }
            set.rankings.extend_from_slice(&ranking);
            set.weights.push(1.0 / n_samples as f64);
        }
        Ok(set)
    }

    /// Exact enumeration or Monte Carlo sample, per `mode`.
    pub fn ranking_set<R: Rng + ?Sized>(&self, query: &QueryRecord, mode: GradientMode, rng: &mut R) -> Result<RankingSet> {
        match mode {
            GradientMode::Exact => self.enumerate(query),
            GradientMode::Sampled { n_samples } => self.sample_set(query, n_samples, rng),
        }
    }

    /// As [`Self::ranking_set`] but without gradients, for evaluation only.
    pub fn ranking_probs<R: Rng + ?Sized>(&self, query: &QueryRecord, mode: GradientMode, rng: &mut R) -> Result<RankingSet> {
        match mode {
            GradientMode::Exact => self.enumerate_probs(query),
            GradientMode::Sampled { n_samples } => self.sample_set_with(query, n_samples, false, rng),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&std::fs::read_to_string(path)?)
    }

    pub fn to_checkpoint(&self) -> String {
        let mut out = format!("{CHECKPOINT_HEADER} {CHECKPOINT_VERSION}\n");
        let _ = writeln!(out, "cutoff {}", self.cutoff);
        let _ = writeln!(out, "temperature {}", self.temperature);
        let weights: Vec<String> = self.weights.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(out, "weights {}", weights.join(" "));
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty checkpoint"))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(CHECKPOINT_HEADER) {
            return Err(bad("missing header"));
        }
        let version: u32 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("missing version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let (mut cutoff, mut temperature, mut weights) = (None, None, None);
        for line in lines {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "cutoff" => cutoff = rest.trim().parse().ok(),
                "temperature" => temperature = rest.trim().parse().ok(),
                "weights" => {
                    let parsed: std::result::Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse).collect();
                    weights = Some(parsed.map_err(|_| bad("unparsable weight"))?);
                }
                other => return Err(Error::Checkpoint(format!("unknown key {other}"))),
            }
        }
        let policy = Self {
            weights: weights.ok_or_else(|| bad("missing weights"))?,
            cutoff: cutoff.ok_or_else(|| bad("missing cutoff"))?,
            temperature: temperature.ok_or_else(|| bad("missing temperature"))?,
        };
        policy.validate()?;
        Ok(policy)
    }
}

/// Depth-first enumeration state with per-depth gradient buffers.
struct Enumerator<'a> {
    features: Vec<&'a [f64]>,
    scores: Vec<f64>,
    exp_scores: Vec<f64>,
    cutoff: usize,
    dim: usize,
    inv_t: f64,
    prefix: Vec<usize>,
    grad_stack: Vec<f64>,
    mean_stack: Vec<f64>,
    out: RankingSet,
}

impl Enumerator<'_> {
    fn run(&mut self, depth: usize, used: u32, prob: f64) {
        let dim = self.dim;
        if depth == self.cutoff {
            self.out.rankings.extend_from_slice(&self.prefix);
            self.out.weights.push(prob);
            self.out.grads.extend_from_slice(&self.grad_stack[depth * dim..(depth + 1) * dim]);
            return;
        }
        let n = self.scores.len();
        let free = |d: usize| used & (1 << d) == 0;
        let mut step = [0.0; MAX_ENUM_DOCS];
        let z: f64 = (0..n).filter(|&d| free(d)).map(|d| self.exp_scores[d]).sum();
        if z > 1e-250 {
            for d in (0..n).filter(|&d| free(d)) {
                step[d] = self.exp_scores[d] / z;
            }
        } else {
            let max = (0..n).filter(|&d| free(d)).map(|d| self.scores[d]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..n).filter(|&d| free(d)).map(|d| (self.scores[d] - max).exp()).sum();
            for d in (0..n).filter(|&d| free(d)) {
                step[d] = (self.scores[d] - max).exp() / z;
            }
        }
        if dim > 0 {
            let mean = &mut self.mean_stack[depth * dim..(depth + 1) * dim];
            mean.iter_mut().for_each(|m| *m = 0.0);
            for d in (0..n).filter(|&d| free(d)) {
                for (acc, x) in mean.iter_mut().zip(self.features[d]) {
                    *acc += step[d] * x;
                }
            }
        }
        for d in 0..n {
            if !free(d) {
                continue;
            }
            if dim > 0 {
                let (head, tail) = self.grad_stack.split_at_mut((depth + 1) * dim);
                let parent = &head[depth * dim..];
                let child = &mut tail[..dim];
                let mean = &self.mean_stack[depth * dim..(depth + 1) * dim];
                for (((c, p), x), m) in child.iter_mut().zip(parent).zip(self.features[d]).zip(mean) {
                    *c = p + self.inv_t * (x - m);
                }
            }
            self.prefix.push(d);
            self.run(depth + 1, used | (1 << d), prob * step[d]);
            self.prefix.pop();
        }
    }
}

fn remaining_softmax(scores: &[f64], remaining: &[usize]) -> Vec<f64> {
    let max = remaining.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = remaining.iter().map(|&i| (scores[i] - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Sequential softmax sampling without replacement.
pub(crate) fn sample_from_scores<R: Rng + ?Sized>(scores: &[f64], cutoff: usize, rng: &mut R) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..scores.len()).collect();
    let mut ranking = Vec::with_capacity(cutoff);
    let mut exps = vec![0.0; scores.len()];
    for _ in 0..cutoff {
        let max = remaining.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (slot, &i) in remaining.iter().enumerate() {
            exps[slot] = (scores[i] - max).exp();
            total += exps[slot];
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for slot in 0..remaining.len() {
            u -= exps[slot];
            if u < 0.0 {
                pick = slot;
                break;
            }
        }
        ranking.push(remaining.remove(pick));
    }
    ranking
}

// ── Ranking sets ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GradientMode {
    /// Enumerate every prefix; only valid for small candidate sets.
    Exact,
    /// Monte Carlo with `n_samples` rankings per query and a leave-one-out baseline.
    Sampled { n_samples: usize },
}

/// Weighted collection of rankings with their `grad log pi`, stored flat.
/// For exact sets the weights are the ranking probabilities, for sampled sets
/// they are `1/M`. Gradients are empty for evaluation-only sets.
#[derive(Debug, Clone)]
pub struct RankingSet {
    pub cutoff: usize,
    pub dim: usize,
    pub rankings: Vec<usize>,
    pub weights: Vec<f64>,
    pub grads: Vec<f64>,
    pub exact: bool,
}

impl RankingSet {
    fn empty(exact: bool, cutoff: usize, dim: usize) -> Self {
        Self { cutoff, dim, rankings: Vec::new(), weights: Vec::new(), grads: Vec::new(), exact }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn ranking(&self, i: usize) -> &[usize] {
        &self.rankings[i * self.cutoff..(i + 1) * self.cutoff]
    }

    pub fn grad(&self, i: usize) -> &[f64] {
        &self.grads[i * self.dim..(i + 1) * self.dim]
    }

    pub fn has_grads(&self) -> bool {
        self.dim > 0 && self.grads.len() == self.len() * self.dim
    }

    pub fn iter_rankings(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.rankings.chunks_exact(self.cutoff.max(1))
    }

    /// Expected examination and metric weight of each document.
    pub fn exposure(&self, n_docs: usize, model: &ExaminationModel) -> ExposureProfile {
        let mut rho = vec![0.0; n_docs];
        let mut omega = vec![0.0; n_docs];
        let alpha: Vec<f64> = (0..self.cutoff).map(|k| model.alpha_at(k)).collect();
        let om: Vec<f64> = (0..self.cutoff).map(|k| model.omega_at(k)).collect();
        for (ranking, w) in self.iter_rankings().zip(&self.weights) {
            for (k, &d) in ranking.iter().enumerate() {
                rho[d] += w * alpha[k];
                omega[d] += w * om[k];
            }
        }
        let n_samples = if self.exact { 0 } else { self.len() };
        ExposureProfile { rho, omega, n_samples }
    }

    /// Expectation of `f(ranking)` under the set.
    pub fn expectation(&self, f: impl Fn(&[usize]) -> f64) -> f64 {
        self.iter_rankings().zip(&self.weights).map(|(r, w)| w * f(r)).sum()
    }

    /// Score-function gradient of `E[f(y)]`. Exact sets centre `f` on its mean,
    /// sampled sets use a leave-one-out baseline, both leaving the expectation
    /// unchanged. Panics if the set was built without gradients.
    pub fn gradient(&self, f: impl Fn(&[usize]) -> f64) -> Vec<f64> {
        assert!(self.has_grads() || self.is_empty(), "ranking set has no gradients");
        let dim = self.dim;
        let values: Vec<f64> = self.iter_rankings().map(f).collect();
        let m = values.len();
        let mut grad = vec![0.0; dim];
        let mut add = |c: f64, i: usize| {
            for (acc, gi) in grad.iter_mut().zip(&self.grads[i * dim..(i + 1) * dim]) {
                *acc += c * gi;
            }
        };
        if self.exact {
            let mean: f64 = values.iter().zip(&self.weights).map(|(v, w)| v * w).sum();
            for (i, (v, w)) in values.iter().zip(&self.weights).enumerate() {
                add(w * (v - mean), i);
            }
        } else if m > 1 {
            let total: f64 = values.iter().sum();
            for (i, v) in values.iter().enumerate() {
                let baseline = (total - v) / (m - 1) as f64;
                add((v - baseline) / m as f64, i);
            }
        } else if m == 1 {
            add(values[0], 0);
        }
        grad
    }
}

// ── Exposure ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureProfile {
    pub rho: Vec<f64>,
    pub omega: Vec<f64>,
    /// Number of Monte Carlo rankings; zero when computed by enumeration.
    pub n_samples: usize,
}

/// Monte Carlo exposure estimate, or exact enumeration when `exact` is set and
/// the query is small enough.
pub fn estimate_exposure<R: Rng + ?Sized>(
    policy: &StochasticRankingPolicy,
    query: &QueryRecord,
    model: &ExaminationModel,
    n_samples: usize,
    exact: bool,
    rng: &mut R,
) -> Result<ExposureProfile> {
    let n = query.documents.len();
    if exact && n <= MAX_ENUM_DOCS {
        return Ok(policy.enumerate_probs(query)?.exposure(n, model));
    }
    if n_samples == 0 {
        return Err(invalid("n_samples must be positive"));
    }
    policy.check_query(query)?;
    let scores = policy.raw_scores(query);
    let mut rho = vec![0.0; n];
    let mut omega = vec![0.0; n];
    for _ in 0..n_samples {
        for (k, d) in sample_from_scores(&scores, policy.cutoff, rng).into_iter().enumerate() {
            rho[d] += model.alpha_at(k);
            omega[d] += model.omega_at(k);
        }
    }
    let m = n_samples as f64;
    rho.iter_mut().for_each(|r| *r /= m);
    omega.iter_mut().for_each(|o| *o /= m);
    Ok(ExposureProfile { rho, omega, n_samples })
}

pub fn exact_exposure(policy: &StochasticRankingPolicy, query: &QueryRecord, model: &ExaminationModel) -> Result<ExposureProfile> {
    Ok(policy.enumerate_probs(query)?.exposure(query.documents.len(), model))
}

/// Exposure of a single deterministic ranking.
pub fn ranking_exposure(ranking: &[usize], n_docs: usize, model: &ExaminationModel) -> ExposureProfile {
    let mut rho = vec![0.0; n_docs];
    let mut omega = vec![0.0; n_docs];
    for (k, &d) in ranking.iter().enumerate() {
        rho[d] = model.alpha_at(k);
        omega[d] = model.omega_at(k);
    }
    ExposureProfile { rho, omega, n_samples: 1 }
}

// ── NDCG ─────────────────────────────────────────────────────────────────────

fn discount(rank0: usize) -> f64 {
    1.0 / ((rank0 + 2) as f64).log2()
}

/// NDCG@K with gain equal to the grade. Queries without relevant documents score 1.
pub fn ndcg_at_k(grades: &[u8], ranking: &[usize], k: usize) -> f64 {
    let mut ideal: Vec<u8> = grades.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(r, &g)| g as f64 * discount(r)).sum();
    if idcg == 0.0 {
        return 1.0;
    }
    let dcg: f64 = ranking.iter().take(k).enumerate().map(|(r, &d)| grades[d] as f64 * discount(r)).sum();
    dcg / idcg
}

/// Expected NDCG@K of a policy on one query.
pub fn policy_ndcg<R: Rng + ?Sized>(
    policy: &StochasticRankingPolicy,
    query: &QueryRecord,
    k: usize,
    mode: GradientMode,
    rng: &mut R,
) -> Result<f64> {
    let grades = query.grades();
    let set = policy.ranking_probs(query, mode, rng)?;
    Ok(set.expectation(|r| ndcg_at_k(&grades, r, k)))
}

/// Mean expected NDCG@K over a set of queries.
pub fn mean_policy_ndcg<R: Rng + ?Sized>(
    policy: &StochasticRankingPolicy,
    queries: &[QueryRecord],
    k: usize,
    mode: GradientMode,
    rng: &mut R,
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for q in queries {
        total += policy_ndcg(policy, q, k, mode, rng)?;
    }
    Ok(total / queries.len() as f64)
}
