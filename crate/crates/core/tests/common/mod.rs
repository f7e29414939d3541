//! Brute-force oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use cltrlab::clicksim::{simulate, simulate_summary, ClickModel, InteractionLog, LogEntry, LogSummary};
use cltrlab::dataset::{Document, QueryRecord, RankingDataset, RelevanceTransform, Split};
use cltrlab::policy::{ExaminationModel, GradientMode, StochasticRankingPolicy};
use cltrlab::rng_from_seed;
use cltrlab::safeltr::{
    crm_lower_bound, dr_estimate, empirical_divergence, exact_propensities, ips_exposure, target_exposures, true_utility, SafetyConfig,
    SafetyMode,
};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn random_query<R: Rng>(id: u64, n_docs: usize, dim: usize, rng: &mut R) -> QueryRecord {
    QueryRecord {
        query_id: id,
        documents: (0..n_docs)
            .map(|_| Document {
                features: (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
                grade: rng.random_range(0..=4),
            })
            .collect(),
    }
}

pub fn random_dataset<R: Rng>(n_queries: usize, n_docs: usize, dim: usize, rng: &mut R) -> RankingDataset {
    RankingDataset {
        queries: (0..n_queries).map(|i| random_query(i as u64, n_docs, dim, rng)).collect(),
        split: Split::Train,
        feature_dim: dim,
    }
}

pub fn random_policy<R: Rng>(dim: usize, cutoff: usize, scale: f64, rng: &mut R) -> StochasticRankingPolicy {
    let w = (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    StochasticRankingPolicy::with_weights(w, cutoff, 1.0).unwrap()
}

pub fn pbm_model(cutoff: usize) -> ClickModel {
    ClickModel { examination: ExaminationModel::pbm(cutoff), transform: RelevanceTransform::pbm_sparse(), adversarial: false }
}

pub fn trust_bias_model(cutoff: usize) -> ClickModel {
    let tb = ExaminationModel::trust_bias();
    let exam = ExaminationModel::custom(tb.alpha[..cutoff].to_vec(), tb.beta[..cutoff].to_vec()).unwrap();
    ClickModel { examination: exam, transform: RelevanceTransform::trust_bias(), adversarial: false }
}

pub fn relevance(data: &RankingDataset, model: &ClickModel) -> Vec<Vec<f64>> {
    data.queries
        .iter()
        .map(|q| q.documents.iter().map(|d| model.transform.probability(d.grade).unwrap()).collect())
        .collect()
}

/// Every (query, ranking, click pattern) with its probability under a
/// uniform query draw, the logging policy and independent clicks.
pub fn outcomes(data: &RankingDataset, logging: &StochasticRankingPolicy, model: &ClickModel) -> Vec<(f64, LogEntry)> {
    let pq = 1.0 / data.queries.len() as f64;
    let mut out = Vec::new();
    for (qi, q) in data.queries.iter().enumerate() {
        let set = logging.enumerate_probs(q).unwrap();
        for (ranking, &w) in set.iter_rankings().zip(&set.weights) {
            let k = ranking.len();
            let probs: Vec<f64> = ranking
                .iter()
                .enumerate()
                .map(|(r, &d)| model.click_probability(q.documents[d].grade, r + 1).unwrap())
                .collect();
            for mask in 0..(1usize << k) {
                let clicks: Vec<bool> = (0..k).map(|i| mask >> i & 1 == 1).collect();
                let pc: f64 = clicks.iter().zip(&probs).map(|(&c, &p)| if c { p } else { 1.0 - p }).product();
                if pc == 0.0 {
                    continue;
                }
                out.push((pq * w * pc, LogEntry { query: qi, ranking: ranking.to_vec(), clicks }));
            }
        }
    }
    out
}

pub fn single(entry: &LogEntry) -> InteractionLog {
    InteractionLog { entries: vec![entry.clone()], logging_policy_ref: String::new() }
}

/// Mean and variance of a single-interaction estimator over all outcomes.
pub fn moments(outcomes: &[(f64, LogEntry)], f: impl Fn(&LogEntry) -> f64) -> (f64, f64) {
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (p, e) in outcomes {
        let v = f(e);
        m1 += p * v;
        m2 += p * v * v;
    }
    (m1, m2 - m1 * m1)
}

/// All permutations of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Central finite differences of `f` at `x`.
pub fn finite_difference(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            p[i] += h;
            let mut m = x.to_vec();
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

/// Logs of size 50 whose lower bound lies below the true utility, out of `logs`.
pub fn coverage(model: &ClickModel, mode: SafetyMode, delta: f64, logs: usize, seed: u64) -> (usize, usize) {
    let mut rng = rng_from_seed(seed);
    let data = random_dataset(3, 4, 3, &mut rng);
    let logging = random_policy(3, 3, 0.5, &mut rng);
    let target = random_policy(3, 3, 1.5, &mut rng);
    let exam = &model.examination;
    let props = exact_propensities(&logging, &data, exam).unwrap();
    let tgt = target_exposures(&target, &data, exam, GradientMode::Exact, &mut rng).unwrap();
    let truth = true_utility(&tgt, &relevance(&data, model));
    let k = exam.cutoff();
    let (z, ratio) = match mode {
        SafetyMode::SafeDr => (exam.weight_total(k), exam.max_beta_ratio()),
        _ => (exam.exposure_total(k), 0.0),
    };
    let cfg = SafetyConfig { delta, z, beta_alpha_max: ratio, mode };
    let rhat = vec![vec![0.3; 4]; 3];
    let mut covered = 0;
    for _ in 0..logs {
        let log = simulate(50, &logging, &data, model, &mut rng).unwrap();
        let queries: Vec<usize> = log.entries.iter().map(|e| e.query).collect();
        let (est, d2) = match mode {
            SafetyMode::SafeDr => {
                let omega: Vec<Vec<f64>> = tgt.iter().map(|t| t.omega.clone()).collect();
                let omega0: Vec<Vec<f64>> = (0..3).map(|q| props.omega(q).unwrap().to_vec()).collect();
                (dr_estimate(&log, &props, &tgt, &rhat, exam).unwrap(), empirical_divergence(&omega, &omega0, &queries).unwrap())
            }
            _ => {
                let rho: Vec<Vec<f64>> = tgt.iter().map(|t| t.rho.clone()).collect();
                let rho0: Vec<Vec<f64>> = (0..3).map(|q| props.rho(q).unwrap().to_vec()).collect();
                (ips_exposure(&log, &props, &tgt, exam).unwrap(), empirical_divergence(&rho, &rho0, &queries).unwrap())
            }
        };
        let bound = crm_lower_bound(est.utility, d2, log.len(), &cfg, est.estimator_kind).unwrap();
        if truth >= bound.full_lower_bound() {
            covered += 1;
        }
    }
    (covered, logs)
}

/// Small trust-bias world with a logged summary, a target policy and random regression estimates.
pub fn gradient_world(seed: u64) -> (RankingDataset, LogSummary, StochasticRankingPolicy, Vec<Vec<f64>>) {
    let mut rng = rng_from_seed(seed);
    let data = random_dataset(3, 4, 3, &mut rng);
    let logging = random_policy(3, 3, 1.0, &mut rng);
    let summary = simulate_summary(200, &logging, &data, &trust_bias_model(3), &mut rng).unwrap();
    let rhat = (0..3).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
    (data, summary, random_policy(3, 3, 1.0, &mut rng), rhat)
}
