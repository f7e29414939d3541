//! Per-cell aggregation of run rows.

use std::path::Path;

use cltrlab::stats::{mean, sample_variance, t_interval};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// One metric of one (method, grid point, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub method: String,
    pub grid: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub grid: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_level: f64,
    pub n_runs: usize,
    /// Fewer than two runs: the interval is the point itself.
    pub degenerate: bool,
}

/// Groups rows by (method, grid, metric) in order of first appearance.
pub fn summarize(rows: &[RunRow], ci_level: f64) -> Result<Vec<SummaryRow>, CliError> {
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(CliError::Config(format!("ci level {ci_level} outside (0, 1)")));
    }
    let mut keys: Vec<(&str, usize, &str)> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        let key = (r.method.as_str(), r.grid, r.metric.as_str());
        match keys.iter().position(|k| *k == key) {
            Some(i) => values[i].push(r.value),
            None => {
                keys.push(key);
                values.push(vec![r.value]);
            }
        }
    }
    Ok(keys
        .into_iter()
        .zip(values)
        .map(|((method, grid, metric), xs)| {
            let ci = t_interval(&xs, ci_level);
            SummaryRow {
                method: method.to_string(),
                grid,
                metric: metric.to_string(),
                mean: mean(&xs),
                std: if xs.len() > 1 { sample_variance(&xs).sqrt() } else { 0.0 },
                ci_low: ci.low,
                ci_high: ci.high,
                ci_level,
                n_runs: xs.len(),
                degenerate: ci.degenerate,
            }
        })
        .collect())
}

pub fn read_runs(path: &Path) -> Result<Vec<RunRow>, CliError> {
    let mut reader = csv::Reader::from_path(path)?;
    let rows = reader.deserialize().collect::<Result<Vec<RunRow>, _>>()?;
    if rows.is_empty() {
        return Err(CliError::Config(format!("{} holds no runs", path.display())));
    }
    Ok(rows)
}
