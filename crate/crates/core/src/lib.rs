//! Counterfactual learning to rank with safety guarantees, plus the bandit
//! baseline corrections and clipped multi-trajectory RL estimators that share
//! the same variance-reduction ideas.
//!
//! Modules:
//! - [`dataset`]: synthetic and file-backed ranking data, relevance transforms, logging ranker
//! - [`policy`]: Plackett-Luce policies, exposure, NDCG
//! - [`clicksim`]: click models, interaction logs, propensity estimates
//! - [`safeltr`]: IPS/DR estimators, generalization bounds, safe CRM and PRPO training
//! - [`bandit`]: contextual bandit estimators, optimal baselines, OPE/OPL drivers
//! - [`rlloop`]: Gaussian chain MDP, REINFORCE/RLOO/PPO/LOOP
//! - [`optim`]: Adam
//! - [`stats`]: small statistics helpers

pub mod bandit;
pub mod clicksim;
pub mod dataset;
pub mod error;
pub mod optim;
pub mod policy;
pub mod rlloop;
pub mod safeltr;
pub mod stats;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

use rand::SeedableRng;

/// Deterministic generator used throughout the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a stream label.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
