//! Click simulation and propensity estimation.
//!
//! Clicks at different ranks are independent Bernoulli draws. The
//! [`LogSummary`] fold keeps per-(query, document) sufficient statistics so
//! that the linear estimators never need to revisit individual interactions.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{RankingDataset, RelevanceTransform};
use crate::error::{invalid, Error, Result};
use crate::policy::{sample_from_scores, ExaminationModel, StochasticRankingPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickModel {
    pub examination: ExaminationModel,
    pub transform: RelevanceTransform,
    /// Complement of the trust-bias click probability.
    pub adversarial: bool,
}

impl ClickModel {
    pub fn pbm() -> Self {
        Self { examination: ExaminationModel::pbm(5), transform: RelevanceTransform::pbm_sparse(), adversarial: false }
    }

    pub fn trust_bias() -> Self {
        Self { examination: ExaminationModel::trust_bias(), transform: RelevanceTransform::trust_bias(), adversarial: false }
    }

    pub fn adversarial() -> Self {
        Self { adversarial: true, ..Self::trust_bias() }
    }

    pub fn cutoff(&self) -> usize {
        self.examination.cutoff()
    }

    /// Click probability at a one-based rank. Ranks beyond the cutoff give 0.
    pub fn click_probability(&self, grade: u8, rank: usize) -> Result<f64> {
        if rank == 0 {
            return Err(invalid("ranks are one-based"));
        }
        self.transform.probability(grade)?;
        Ok(self.prob(grade, rank - 1))
    }

    #[inline]
    pub(crate) fn prob(&self, grade: u8, rank0: usize) -> f64 {
        if rank0 >= self.cutoff() {
            return 0.0;
        }
        let p = self.examination.alpha_at(rank0) * self.transform.prob(grade) + self.examination.beta_at(rank0);
        let p = if self.adversarial { 1.0 - p } else { p };
        p.clamp(0.0, 1.0)
    }
}

// ── Logs ─────────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// Index of the query within the dataset that produced the log.
    pub query: usize,
    pub ranking: Vec<usize>,
    pub clicks: Vec<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionLog {
    pub entries: Vec<LogEntry>,
    pub logging_policy_ref: String,
}

impl InteractionLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: LogEntry) -> Result<()> {
        if entry.ranking.len() != entry.clicks.len() {
            return Err(invalid("clicks and ranking differ in length"));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Appends the entries of `other`, as when merging shards.
    pub fn extend(&mut self, other: InteractionLog) {
        self.entries.extend(other.entries);
    }

    /// One line per interaction: `qid,doc,...,doc,bits`.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.entries {
            let mut line = e.query.to_string();
            for d in &e.ranking {
                line.push(',');
                line.push_str(&d.to_string());
            }
            line.push(',');
            line.extend(e.clicks.iter().map(|&c| if c { '1' } else { '0' }));
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut log = InteractionLog::default();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |m: &str| Error::Parse { line: i + 1, message: m.to_string() };
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() < 3 {
                return Err(err("expected qid, at least one document and click bits"));
            }
            let query = fields[0].parse().map_err(|_| err("bad qid"))?;
            let ranking = fields[1..fields.len() - 1]
                .iter()
                .map(|f| f.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| err("bad document id"))?;
            let bits = fields[fields.len() - 1];
            let clicks = bits
                .chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    _ => Err(err("click bits must be 0 or 1")),
                })
                .collect::<Result<Vec<_>>>()?;
            if clicks.len() != ranking.len() {
                return Err(err("click bits and ranking differ in length"));
            }
            log.entries.push(LogEntry { query, ranking, clicks });
        }
        Ok(log)
    }
}

fn check_simulation(policy: &StochasticRankingPolicy, data: &RankingDataset, model: &ClickModel) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if policy.cutoff != model.cutoff() {
        return Err(invalid(format!(
            "policy cutoff {} does not match click model cutoff {}",
            policy.cutoff,
            model.cutoff()
        )));
    }
    data.validate(policy.cutoff)
}

/// Draws `n` interactions: a uniform query, a ranking from `policy`, then clicks.
pub fn simulate<R: Rng + ?Sized>(
    n: usize,
    policy: &StochasticRankingPolicy,
    data: &RankingDataset,
    model: &ClickModel,
    rng: &mut R,
) -> Result<InteractionLog> {
    check_simulation(policy, data, model)?;
    let scores: Vec<Vec<f64>> = data.queries.iter().map(|q| policy.raw_scores(q)).collect();
    let mut log = InteractionLog { entries: Vec::with_capacity(n), logging_policy_ref: policy_ref(policy) };
    for _ in 0..n {
        let (query, ranking, clicks) = draw_interaction(&scores, policy.cutoff, data, model, rng);
        log.entries.push(LogEntry { query, ranking, clicks });
    }
    Ok(log)
}

/// Same draws as [`simulate`] but folded straight into a [`LogSummary`].
pub fn simulate_summary<R: Rng + ?Sized>(
    n: usize,
    policy: &StochasticRankingPolicy,
    data: &RankingDataset,
    model: &ClickModel,
    rng: &mut R,
) -> Result<LogSummary> {
    check_simulation(policy, data, model)?;
    let scores: Vec<Vec<f64>> = data.queries.iter().map(|q| policy.raw_scores(q)).collect();
    let mut summary = LogSummary::new(data, &model.examination);
    for _ in 0..n {
        let (query, ranking, clicks) = draw_interaction(&scores, policy.cutoff, data, model, rng);
        summary.add(query, &ranking, &clicks);
    }
    Ok(summary)
}

fn draw_interaction<R: Rng + ?Sized>(
    scores: &[Vec<f64>],
    cutoff: usize,
    data: &RankingDataset,
    model: &ClickModel,
    rng: &mut R,
) -> (usize, Vec<usize>, Vec<bool>) {
    let query = rng.random_range(0..data.queries.len());
    let ranking = sample_from_scores(&scores[query], cutoff, rng);
    let docs = &data.queries[query].documents;
    let clicks = ranking.iter().enumerate().map(|(k, &d)| rng.random::<f64>() < model.prob(docs[d].grade, k)).collect();
    (query, ranking, clicks)
}

fn policy_ref(policy: &StochasticRankingPolicy) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in &policy.weights {
        for b in w.to_bits().to_le_bytes() {
            h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("pl-{h:016x}")
}

// ── Sufficient statistics ────────────────────────────────────────────────────

/// Aggregates for one distinct displayed ranking.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ActionStats {
    pub count: usize,
    /// Sum over interactions of the number of clicks.
    pub click_sum: f64,
    /// Sum over interactions of the squared number of clicks.
    pub click_sq_sum: f64,
}

/// Per-query aggregates of a log: interaction count, click counts and summed
/// `alpha`/`beta` at the ranks where each document was displayed.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryStats {
    pub n: usize,
    pub clicks: Vec<f64>,
    pub alpha_sum: Vec<f64>,
    pub beta_sum: Vec<f64>,
    /// `rank_counts[k][d]`: how often document `d` was shown at rank `k`.
    pub rank_counts: Vec<Vec<u32>>,
    pub actions: BTreeMap<Vec<usize>, ActionStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogSummary {
    pub examination: ExaminationModel,
    pub queries: Vec<QueryStats>,
    pub n_total: usize,
}

impl LogSummary {
    pub fn new(data: &RankingDataset, examination: &ExaminationModel) -> Self {
        let k = examination.cutoff();
        let queries = data
            .queries
            .iter()
            .map(|q| {
                let n = q.documents.len();
                QueryStats {
                    n: 0,
                    clicks: vec![0.0; n],
                    alpha_sum: vec![0.0; n],
                    beta_sum: vec![0.0; n],
                    rank_counts: vec![vec![0; n]; k],
                    actions: BTreeMap::new(),
                }
            })
            .collect();
        Self { examination: examination.clone(), queries, n_total: 0 }
    }

    pub fn from_log(log: &InteractionLog, data: &RankingDataset, examination: &ExaminationModel) -> Result<Self> {
        let mut summary = Self::new(data, examination);
        for e in &log.entries {
            let stats = summary.queries.get(e.query).ok_or_else(|| invalid(format!("log references unknown query {}", e.query)))?;
            if e.ranking.iter().any(|&d| d >= stats.clicks.len()) {
                return Err(invalid(format!("log references unknown document of query {}", e.query)));
            }
            summary.add(e.query, &e.ranking, &e.clicks);
        }
        Ok(summary)
    }

    pub(crate) fn add(&mut self, query: usize, ranking: &[usize], clicks: &[bool]) {
        let exam = &self.examination;
        let stats = &mut self.queries[query];
        stats.n += 1;
        for (k, (&d, &c)) in ranking.iter().zip(clicks).enumerate() {
            if c {
                stats.clicks[d] += 1.0;
            }
            stats.alpha_sum[d] += exam.alpha_at(k);
            stats.beta_sum[d] += exam.beta_at(k);
            if k < stats.rank_counts.len() {
                stats.rank_counts[k][d] += 1;
            }
        }
        let n_clicks = clicks.iter().filter(|&&c| c).count() as f64;
        let action = stats.actions.entry(ranking.to_vec()).or_default();
        action.count += 1;
        action.click_sum += n_clicks;
        action.click_sq_sum += n_clicks * n_clicks;
        self.n_total += 1;
    }

    /// Indices of queries that appear at least once.
    pub fn logged_queries(&self) -> impl Iterator<Item = usize> + '_ {
        self.queries.iter().enumerate().filter(|(_, s)| s.n > 0).map(|(i, _)| i)
    }
}

// ── Propensities ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityEstimate {
    /// Per query, per document; `None` for queries absent from the log.
    pub rho: Vec<Option<Vec<f64>>>,
    /// Unclipped metric-weight estimates.
    pub omega: Vec<Option<Vec<f64>>>,
    /// Per query, per rank, per document display frequency.
    pub rank_freq: Vec<Option<Vec<Vec<f64>>>>,
    pub clip_floor: Option<f64>,
}

impl PropensityEstimate {
    pub fn rho(&self, query: usize) -> Result<&[f64]> {
        self.rho.get(query).and_then(|r| r.as_deref()).ok_or_else(|| invalid(format!("no propensity for query {query}: absent from log")))
    }

    pub fn omega(&self, query: usize) -> Result<&[f64]> {
        self.omega.get(query).and_then(|r| r.as_deref()).ok_or_else(|| invalid(format!("no propensity for query {query}: absent from log")))
    }

    /// Product of per-rank display frequencies over the first `K - 1` ranks.
    pub fn action_propensity(&self, query: usize, ranking: &[usize]) -> Result<f64> {
        let freq = self
            .rank_freq
            .get(query)
            .and_then(|r| r.as_ref())
            .ok_or_else(|| invalid(format!("no propensity for query {query}: absent from log")))?;
        let upto = ranking.len().saturating_sub(1).max(1).min(ranking.len());
        Ok(ranking.iter().take(upto).enumerate().map(|(k, &d)| freq[k][d]).product())
    }
}

/// Clip floor `10 / sqrt(N)`.
pub fn clip_floor(n: usize) -> f64 {
    10.0 / (n as f64).sqrt()
}

pub fn estimate_propensities(summary: &LogSummary, clip: bool) -> PropensityEstimate {
    let floor = clip.then(|| clip_floor(summary.n_total));
    let mut rho = Vec::with_capacity(summary.queries.len());
    let mut omega = Vec::with_capacity(summary.queries.len());
    let mut rank_freq = Vec::with_capacity(summary.queries.len());
    for s in &summary.queries {
        if s.n == 0 {
            rho.push(None);
            omega.push(None);
            rank_freq.push(None);
            continue;
        }
        let n = s.n as f64;
        let r: Vec<f64> = s
            .alpha_sum
            .iter()
            .map(|a| {
                let v = a / n;
                floor.map_or(v, |f| v.max(f))
            })
            .collect();
        let o: Vec<f64> = s.alpha_sum.iter().zip(&s.beta_sum).map(|(a, b)| (a + b) / n).collect();
        let f: Vec<Vec<f64>> = s.rank_counts.iter().map(|row| row.iter().map(|&c| c as f64 / n).collect()).collect();
        rho.push(Some(r));
        omega.push(Some(o));
        rank_freq.push(Some(f));
    }
    PropensityEstimate { rho, omega, rank_freq, clip_floor: floor }
}
