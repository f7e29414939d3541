//! Counterfactual learning to rank with safety guarantees.

pub mod bound;
pub mod estimators;
pub mod experiment;
pub mod prpo;
pub mod regression;
pub mod train;

pub use bound::{crm_lower_bound, divergence, empirical_divergence, SafetyConfig, SafetyMode};
pub use estimators::{
    dr_estimate, exact_propensities, ips_action, ips_exposure, naive_estimate, target_exposures, true_utility,
    CltrEstimate, EstimatorKind,
};
pub use experiment::{run_cell, CellResult, ClickModelKind, World, WorldConfig};
pub use prpo::{prpo_clip, prpo_objective, prpo_rewards, prpo_schedule, PrpoConfig, PrpoSchedule};
pub use regression::{RegressionModel, RegressionSource};
pub use train::{train, PolicyInit, ValidationMetric, Evaluation, ObjectiveContext, SafeLtrMethod, TrainConfig, TrainOutcome, TrainingInput, TraceRow};
