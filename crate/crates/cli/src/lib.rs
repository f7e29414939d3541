//! Experiment runner for the cltrlab families: configuration, seeded grid
//! execution, CSV results and a JSON manifest.

pub mod config;
pub mod error;
pub mod output;
pub mod runner;
pub mod summary;

pub use config::{ExperimentConfig, Family, OUTPUT_ROOT_ENV};
pub use error::CliError;
pub use runner::{resummarize, run, Manifest, RunOptions, RunReport};
pub use summary::{summarize, RunRow, SummaryRow};
