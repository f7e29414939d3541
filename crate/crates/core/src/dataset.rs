//! Learning-to-rank datasets: synthetic generation, a loader for qid-annotated
//! sparse feature files, relevance transforms and the supervised logging ranker.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::policy::StochasticRankingPolicy;
use crate::rng_from_seed;
use crate::stats::softmax;

pub const MAX_GRADE: u8 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub features: Vec<f64>,
    pub grade: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: u64,
    pub documents: Vec<Document>,
}

impl QueryRecord {
    pub fn grades(&self) -> Vec<u8> {
        self.documents.iter().map(|d| d.grade).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingDataset {
    pub queries: Vec<QueryRecord>,
    pub split: Split,
    pub feature_dim: usize,
}

impl RankingDataset {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Checks grades, feature lengths and the minimum candidate count.
    pub fn validate(&self, cutoff: usize) -> Result<()> {
        for q in &self.queries {
            if q.documents.len() < cutoff {
                return Err(invalid(format!(
                    "query {} has {} documents, fewer than the cutoff {cutoff}",
                    q.query_id,
                    q.documents.len()
                )));
            }
            for d in &q.documents {
                if d.grade > MAX_GRADE {
                    return Err(invalid(format!("grade {} outside 0..=4", d.grade)));
                }
                if d.features.len() != self.feature_dim {
                    return Err(Error::DimensionMismatch { expected: self.feature_dim, found: d.features.len() });
                }
            }
        }
        Ok(())
    }

    /// Keeps at most `max_docs` candidates per query, in canonical order.
    pub fn cap_candidates(&mut self, max_docs: usize) {
        for q in &mut self.queries {
            q.documents.truncate(max_docs);
        }
    }

    /// Writes one JSON object per query.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        for q in &self.queries {
            serde_json::to_writer(&mut out, q)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(input: R, split: Split) -> Result<Self> {
        let mut queries = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            queries.push(serde_json::from_str::<QueryRecord>(&line)?);
        }
        let feature_dim = queries
            .first()
            .and_then(|q| q.documents.first())
            .map(|d| d.features.len())
            .ok_or(Error::EmptyDataset)?;
        Ok(Self { queries, split, feature_dim })
    }
}

// ── Synthetic generation ─────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_queries: usize,
    pub docs_per_query: usize,
    pub feature_dim: usize,
    /// Mean shift per grade step along the hidden relevance direction.
    pub signal: f64,
    /// Standard deviation of the isotropic feature noise.
    pub noise: f64,
    /// Categorical weights over grades 0..=4.
    pub grade_weights: [f64; 5],
    pub cutoff: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_queries: 200,
            docs_per_query: 10,
            feature_dim: 10,
            signal: 0.5,
            noise: 1.0,
            grade_weights: [1.0; 5],
            cutoff: 5,
            seed: 0,
        }
    }
}

/// Generates all queries into a single dataset tagged as the training split.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<RankingDataset> {
    if config.n_queries == 0 || config.feature_dim == 0 {
        return Err(invalid("n_queries and feature_dim must be positive"));
    }
    if config.docs_per_query < config.cutoff.max(1) {
        return Err(invalid(format!(
            "docs_per_query {} is smaller than the cutoff {}",
            config.docs_per_query, config.cutoff
        )));
    }
    let total_weight: f64 = config.grade_weights.iter().sum();
    if config.grade_weights.iter().any(|w| *w < 0.0) || total_weight <= 0.0 {
        return Err(invalid("grade weights must be non-negative with a positive sum"));
    }
    let mut rng = rng_from_seed(config.seed);
    let mut direction: Vec<f64> = (0..config.feature_dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    direction.iter_mut().for_each(|x| *x /= norm);

    let mut queries = Vec::with_capacity(config.n_queries);
    for qid in 0..config.n_queries {
        let documents = (0..config.docs_per_query)
            .map(|_| {
                let mut u = rng.random::<f64>() * total_weight;
                let mut grade = MAX_GRADE;
                for (g, w) in config.grade_weights.iter().enumerate() {
                    if u < *w {
                        grade = g as u8;
                        break;
                    }
                    u -= w;
                }
                let shift = config.signal * (grade as f64 - 2.0);
                let features = direction
                    .iter()
                    .map(|u| {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        shift * u + config.noise * noise
                    })
                    .collect();
                Document { features, grade }
            })
            .collect();
        queries.push(QueryRecord { query_id: qid as u64, documents });
    }
    Ok(RankingDataset { queries, split: Split::Train, feature_dim: config.feature_dim })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub train: RankingDataset,
    pub validation: RankingDataset,
    pub test: RankingDataset,
}

/// Shuffles queries with `seed` and cuts them 60/20/20.
pub fn split_dataset(data: &RankingDataset, seed: u64) -> Result<DatasetSplits> {
    if data.queries.len() < 3 {
        return Err(invalid("need at least three queries to split"));
    }
    let mut order: Vec<usize> = (0..data.queries.len()).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let n = order.len();
    let n_train = ((n as f64) * 0.6).round().max(1.0) as usize;
    let n_val = (((n as f64) * 0.2).round() as usize).clamp(1, n - n_train - 1);
    let take = |idx: &[usize], split| RankingDataset {
        queries: idx.iter().map(|&i| data.queries[i].clone()).collect(),
        split,
        feature_dim: data.feature_dim,
    };
    Ok(DatasetSplits {
        train: take(&order[..n_train], Split::Train),
        validation: take(&order[n_train..n_train + n_val], Split::Validation),
        test: take(&order[n_train + n_val..], Split::Test),
    })
}

// ── File loading ─────────────────────────────────────────────────────────────

/// Parses lines of the form `grade qid:<int> <idx>:<val> ... [# comment]`.
/// Feature indices are one-based; absent indices are zero.
pub fn parse_ltr<R: BufRead>(input: R, split: Split) -> Result<RankingDataset> {
    struct Row {
        grade: u8,
        features: Vec<(usize, f64)>,
    }
    let mut order: Vec<u64> = Vec::new();
    let mut groups: HashMap<u64, Vec<Row>> = HashMap::new();
    let mut max_index = 0usize;
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        let mut tokens = content.split_whitespace();
        let grade_token = tokens.next().ok_or_else(|| parse_err("missing grade".into()))?;
        let grade_value: f64 = grade_token.parse().map_err(|_| parse_err(format!("bad grade {grade_token:?}")))?;
        if grade_value.fract() != 0.0 {
            return Err(parse_err(format!("grade {grade_token:?} is not an integer")));
        }
        if !(0.0..=MAX_GRADE as f64).contains(&grade_value) {
            return Err(Error::InvalidGrade { line: line_no, grade: grade_value as i64 });
        }
        let qid_token = tokens.next().ok_or_else(|| parse_err("missing qid".into()))?;
        let qid: u64 = qid_token
            .strip_prefix("qid:")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(format!("bad qid token {qid_token:?}")))?;
        let mut features = Vec::new();
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| parse_err(format!("bad feature {tok:?}")))?;
            let idx: usize = idx.parse().map_err(|_| parse_err(format!("bad feature index {idx:?}")))?;
            if idx == 0 {
                return Err(parse_err("feature indices are one-based".into()));
            }
            let val: f64 = val.parse().map_err(|_| parse_err(format!("bad feature value {val:?}")))?;
            max_index = max_index.max(idx);
            features.push((idx, val));
        }
        if !groups.contains_key(&qid) {
            order.push(qid);
        }
        groups.entry(qid).or_default().push(Row { grade: grade_value as u8, features });
    }
    if order.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let feature_dim = max_index.max(1);
    let queries = order
        .into_iter()
        .map(|qid| {
            let documents = groups
                .remove(&qid)
                .unwrap_or_default()
                .into_iter()
                .map(|row| {
                    let mut features = vec![0.0; feature_dim];
                    for (idx, val) in row.features {
                        features[idx - 1] = val;
                    }
                    Document { features, grade: row.grade }
                })
                .collect();
            QueryRecord { query_id: qid, documents }
        })
        .collect();
    Ok(RankingDataset { queries, split, feature_dim })
}

pub fn load_ltr_file(path: &Path, split: Split) -> Result<RankingDataset> {
    let file = std::fs::File::open(path)?;
    parse_ltr(std::io::BufReader::new(file), split)
}

// ── Relevance transforms ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    PbmSparse,
    TrustBias,
}

/// Maps a grade to a relevance probability `slope * grade + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceTransform {
    pub kind: TransformKind,
    pub slope: f64,
    pub offset: f64,
}

impl RelevanceTransform {
    pub fn pbm_sparse() -> Self {
        Self { kind: TransformKind::PbmSparse, slope: 0.025, offset: 0.2 }
    }

    pub fn trust_bias() -> Self {
        Self { kind: TransformKind::TrustBias, slope: 0.25, offset: 0.0 }
    }

    pub fn of_kind(kind: TransformKind) -> Self {
        match kind {
            TransformKind::PbmSparse => Self::pbm_sparse(),
            TransformKind::TrustBias => Self::trust_bias(),
        }
    }

    pub fn probability(&self, grade: u8) -> Result<f64> {
        if grade > MAX_GRADE {
            return Err(invalid(format!("grade {grade} outside 0..=4")));
        }
        Ok(self.prob(grade))
    }

    #[inline]
    pub(crate) fn prob(&self, grade: u8) -> f64 {
        (self.slope * grade as f64 + self.offset).clamp(0.0, 1.0)
    }
}

pub fn relevance_probability(transform: &RelevanceTransform, grade: u8) -> Result<f64> {
    transform.probability(grade)
}

// ── Logging policy ───────────────────────────────────────────────────────────

/// Listwise softmax cross-entropy trainer for the logging ranker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoggingTrainer {
    pub fraction: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub cutoff: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for LoggingTrainer {
    fn default() -> Self {
        Self { fraction: 0.03, epochs: 100, learning_rate: 0.1, l2: 0.0, cutoff: 5, temperature: 1.0, seed: 0 }
    }
}

/// Trains on a seeded subset of `fraction` of the queries. The target
/// distribution per query is the softmax of the grades.
pub fn train_logging_policy(data: &RankingDataset, trainer: &LoggingTrainer) -> Result<StochasticRankingPolicy> {
    if !(trainer.fraction > 0.0 && trainer.fraction <= 1.0) {
        return Err(invalid(format!("fraction must lie in (0, 1], got {}", trainer.fraction)));
    }
    let n_selected = (trainer.fraction * data.queries.len() as f64).round() as usize;
    if n_selected == 0 {
        return Err(invalid(format!(
            "fraction {} selects no queries out of {}",
            trainer.fraction,
            data.queries.len()
        )));
    }
    let order = logging_subset(data.queries.len(), trainer.fraction, trainer.seed);

    let mut weights = vec![0.0; data.feature_dim];
    for _ in 0..trainer.epochs {
        let mut grad = vec![0.0; data.feature_dim];
        for &qi in &order {
            let q = &data.queries[qi];
            let scores: Vec<f64> = q.documents.iter().map(|d| crate::stats::dot(&weights, &d.features)).collect();
            let p = softmax(&scores);
            let target = softmax(&q.documents.iter().map(|d| d.grade as f64).collect::<Vec<_>>());
            for ((doc, pi), ti) in q.documents.iter().zip(&p).zip(&target) {
                for (g, x) in grad.iter_mut().zip(&doc.features) {
                    *g += (pi - ti) * x;
                }
            }
        }
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= trainer.learning_rate * (g / n_selected as f64 + trainer.l2 * *w);
        }
    }
    StochasticRankingPolicy::with_weights(weights, trainer.cutoff, trainer.temperature)
}

/// Indices of the queries the trainer would select, exposed for reproducibility checks.
pub fn logging_subset(n_queries: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let n_selected = (fraction * n_queries as f64).round() as usize;
    let mut order: Vec<usize> = (0..n_queries).collect();
    order.shuffle(&mut rng_from_seed(seed));
    order.truncate(n_selected);
    order.sort_unstable();
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_synthetic_shape() {
        let cfg = SyntheticConfig { n_queries: 1, docs_per_query: 5, feature_dim: 2, seed: 7, ..Default::default() };
        let a = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.queries.len(), 1);
        assert_eq!(a.queries[0].documents.len(), 5);
        assert!(a.queries[0].documents.iter().all(|d| d.grade <= 4 && d.features.len() == 2));
        assert_eq!(a, generate_synthetic(&cfg).unwrap());
    }

    #[test]
    fn invalid_sizes_rejected() {
        let cfg = SyntheticConfig { docs_per_query: 3, ..Default::default() };
        assert!(generate_synthetic(&cfg).is_err());
        let cfg = SyntheticConfig { feature_dim: 0, ..Default::default() };
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn transform_examples() {
        let pbm = RelevanceTransform::pbm_sparse();
        let tb = RelevanceTransform::trust_bias();
        assert!((relevance_probability(&pbm, 4).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(relevance_probability(&tb, 0).unwrap(), 0.0);
        assert_eq!(relevance_probability(&tb, 2).unwrap(), 0.5);
        assert!(relevance_probability(&tb, 5).is_err());
    }

    #[test]
    fn two_line_file() {
        let data = parse_ltr("4 qid:1 1:0.5\n0 qid:1 2:1.0\n".as_bytes(), Split::Train).unwrap();
        assert_eq!(data.queries.len(), 1);
        assert_eq!(data.queries[0].documents.len(), 2);
        assert!(data.feature_dim >= 2);
        assert_eq!(data.queries[0].documents[0].features, vec![0.5, 0.0]);
    }

    #[test]
    fn qid_grouping_follows_first_appearance() {
        let text = "1 qid:2 1:1\n3 qid:1 1:2\n2 qid:2 1:3 # trailing\n";
        let data = parse_ltr(text.as_bytes(), Split::Test).unwrap();
        assert_eq!(data.queries.iter().map(|q| q.query_id).collect::<Vec<_>>(), vec![2, 1]);
        assert_eq!(data.queries[0].grades(), vec![1, 2]);
        assert_eq!(data.queries[1].grades(), vec![3]);
    }

    #[test]
    fn loader_errors() {
        assert!(matches!(parse_ltr("".as_bytes(), Split::Train), Err(Error::EmptyDataset)));
        assert!(matches!(parse_ltr("5 qid:1 1:1".as_bytes(), Split::Train), Err(Error::InvalidGrade { line: 1, .. })));
        match parse_ltr("1 qid:1 1:1\n2 qid1 1:1\n".as_bytes(), Split::Train) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fraction_zero_is_error() {
        let data = generate_synthetic(&SyntheticConfig { n_queries: 10, ..Default::default() }).unwrap();
        let t = LoggingTrainer { fraction: 0.0, ..Default::default() };
        assert!(train_logging_policy(&data, &t).is_err());
        let t = LoggingTrainer { fraction: 0.01, ..Default::default() };
        assert!(train_logging_policy(&data, &t).is_err());
    }

    #[test]
    fn subset_selection_is_deterministic() {
        assert_eq!(logging_subset(200, 0.03, 4), logging_subset(200, 0.03, 4));
        assert_eq!(logging_subset(200, 0.03, 4).len(), 6);
    }

    #[test]
    fn snapshot_roundtrip() {
        let data = generate_synthetic(&SyntheticConfig { n_queries: 3, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        data.write_snapshot(&mut buf).unwrap();
        assert_eq!(buf.iter().filter(|b| **b == b'\n').count(), 3);
        let back = RankingDataset::read_snapshot(buf.as_slice(), Split::Train).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn split_proportions() {
        let data = generate_synthetic(&SyntheticConfig { n_queries: 200, ..Default::default() }).unwrap();
        let s = split_dataset(&data, 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (120, 40, 40));
    }
}
