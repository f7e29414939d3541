//! Fixtures shared by the benchmarks.

use cltrlab::bandit::{BanditConfig, BanditEnvironment, BanditLog, SoftmaxPolicy};
use cltrlab::clicksim::{simulate_summary, ClickModel, LogSummary};
use cltrlab::dataset::{generate_synthetic, RankingDataset, SyntheticConfig};
use cltrlab::policy::StochasticRankingPolicy;
use cltrlab::rlloop::{ChainConfig, ChainMdp, GaussianChainPolicy};
use cltrlab::rng_from_seed;
use cltrlab::safeltr::ClickModelKind;

pub struct RankingFixture {
    pub data: RankingDataset,
    pub policy: StochasticRankingPolicy,
    pub model: ClickModel,
    pub summary: LogSummary,
}

/// Synthetic queries with 6 documents each, a trust-bias click model and a
/// logged summary of `n_interactions`.
pub fn ranking_fixture(n_queries: usize, n_interactions: usize) -> RankingFixture {
    let model = ClickModelKind::TrustBias.model();
    let cutoff = model.cutoff();
    let data = generate_synthetic(&SyntheticConfig { n_queries, docs_per_query: 6, cutoff, ..Default::default() }).unwrap();
    let weights = (0..data.feature_dim).map(|i| (i as f64 * 0.7).sin()).collect();
    let policy = StochasticRankingPolicy::with_weights(weights, cutoff, 1.0).unwrap();
    let summary = simulate_summary(n_interactions, &policy, &data, &model, &mut rng_from_seed(1)).unwrap();
    RankingFixture { data, policy, model, summary }
}

/// A bandit environment, a log of `rows` and a non-uniform target policy.
pub fn bandit_fixture(n_actions: usize, rows: usize) -> (BanditEnvironment, BanditLog, SoftmaxPolicy) {
    let env = BanditEnvironment::generate(&BanditConfig { n_actions, ..Default::default() }).unwrap();
    let log = env.simulate(rows, &mut rng_from_seed(2));
    let dim = env.context_dim();
    let policy = SoftmaxPolicy::from_weights(n_actions, dim, (0..n_actions * dim).map(|i| (i as f64 * 0.37).cos()).collect()).unwrap();
    (env, log, policy)
}

pub fn chain_fixture() -> (ChainMdp, GaussianChainPolicy) {
    let mdp = ChainMdp::generate(&ChainConfig::default()).unwrap();
    let policy = GaussianChainPolicy::zeros(&mdp);
    (mdp, policy)
}
