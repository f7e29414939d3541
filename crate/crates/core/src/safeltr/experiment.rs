//! Semi-synthetic CLTR runs: build a world, simulate logs, train, report.

use serde::{Deserialize, Serialize};

use crate::clicksim::{simulate_summary, ClickModel};
use crate::dataset::{generate_synthetic, split_dataset, train_logging_policy, DatasetSplits, LoggingTrainer, SyntheticConfig};
use crate::error::{invalid, Result};
use crate::policy::{mean_policy_ndcg, GradientMode, StochasticRankingPolicy};
use crate::safeltr::train::{train, SafeLtrMethod, TrainConfig, TrainingInput, TraceRow};
use crate::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClickModelKind {
    Pbm,
    TrustBias,
    Adversarial,
}

impl ClickModelKind {
    pub fn model(self) -> ClickModel {
        match self {
            Self::Pbm => ClickModel::pbm(),
            Self::TrustBias => ClickModel::trust_bias(),
            Self::Adversarial => ClickModel::adversarial(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub dataset: SyntheticConfig,
    pub click_model: ClickModelKind,
    pub logging: LoggingTrainer,
    /// Validation interactions per training interaction.
    pub validation_ratio: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dataset: SyntheticConfig::default(),
            click_model: ClickModelKind::Pbm,
            logging: LoggingTrainer::default(),
            validation_ratio: 1.0 / 3.0,
        }
    }
}

/// Dataset splits, logging policy and click model for one seed.
#[derive(Debug, Clone)]
pub struct World {
    pub splits: DatasetSplits,
    pub logging: StochasticRankingPolicy,
    pub click_model: ClickModel,
    pub validation_ratio: f64,
}

impl World {
    /// The dataset, split and logging policy all derive from `seed`.
    pub fn build(config: &WorldConfig, seed: u64) -> Result<Self> {
        if !(config.validation_ratio >= 0.0) {
            return Err(invalid("validation_ratio must be non-negative"));
        }
        let click_model = config.click_model.model();
        let cutoff = click_model.cutoff();
        let data = generate_synthetic(&SyntheticConfig { cutoff, seed: derive_seed(seed, 1), ..config.dataset.clone() })?;
        let splits = split_dataset(&data, derive_seed(seed, 2))?;
        let logging = train_logging_policy(
            &splits.train,
            &LoggingTrainer { cutoff, seed: derive_seed(seed, 3), ..config.logging.clone() },
        )?;
        Ok(Self { splits, logging, click_model, validation_ratio: config.validation_ratio })
    }

    pub fn logging_ndcg(&self, mode: GradientMode, seed: u64) -> Result<f64> {
        let mut rng = rng_from_seed(seed);
        mean_policy_ndcg(&self.logging, &self.splits.test.queries, self.logging.cutoff, mode, &mut rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub test_ndcg: f64,
    pub logging_ndcg: f64,
    pub best_epoch: usize,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

/// Simulates training and validation logs of sizes `n` and
/// `ceil(validation_ratio * n)` and trains `method` on them.
pub fn run_cell(world: &World, method: &SafeLtrMethod, n: usize, config: &TrainConfig, seed: u64) -> Result<CellResult> {
    if n == 0 {
        return Err(invalid("N must be at least 1"));
    }
    let mut rng = rng_from_seed(derive_seed(seed, 10));
    let train_log = simulate_summary(n, &world.logging, &world.splits.train, &world.click_model, &mut rng)?;
    let n_val = (world.validation_ratio * n as f64).ceil() as usize;
    let val_log = simulate_summary(n_val, &world.logging, &world.splits.validation, &world.click_model, &mut rng)?;
    let input = TrainingInput {
        splits: &world.splits,
        logging: &world.logging,
        click_model: &world.click_model,
        train_log: &train_log,
        validation_log: &val_log,
    };
    let out = train(method, &input, &TrainConfig { seed: derive_seed(seed, 11), ..config.clone() })?;
    Ok(CellResult {
        method: method.name().to_string(),
        n,
        seed,
        test_ndcg: out.test_ndcg,
        logging_ndcg: out.logging_ndcg,
        best_epoch: out.best_epoch,
        trace: out.trace,
    })
}
