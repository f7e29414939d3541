//! Grid execution: every (method, grid point, seed) cell runs on a worker pool,
//! writes its own file, and the aggregate files are written after all cells finish.

use std::fs;
use std::path::{Path, PathBuf};

use cltrlab::bandit::{fit_target_policy, ope_estimate, train_opl, BanditEnvironment, OplConfig};
use cltrlab::rlloop::{train_rl, ChainMdp, RlConfig};
use cltrlab::safeltr::{run_cell, World};
use cltrlab::{derive_seed, rng_from_seed};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MethodSpec, Params};
use crate::error::CliError;
use crate::output::{write_csv, write_json};
use crate::summary::{summarize, RunRow, SummaryRow};

pub const RUNS_FILE: &str = "runs.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CELLS_DIR: &str = "cells";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub method: String,
    pub grid: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub family: String,
    pub config_hash: String,
    pub version: String,
    pub core_version: String,
    pub seeds: Vec<u64>,
    pub grid: Vec<usize>,
    pub methods: Vec<String>,
    pub ci_level: f64,
    pub n_cells: usize,
    pub failed: Vec<FailedCell>,
    pub complete: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub runs: Vec<RunRow>,
    pub summary: Vec<SummaryRow>,
    pub manifest: Manifest,
}

struct Cell {
    index: usize,
    method: usize,
    grid: usize,
    seed: u64,
}

/// Read-only state shared by every cell, built once before the grid runs.
enum Shared {
    Safeltr(Vec<(u64, World)>),
    Opl(BanditEnvironment),
    Ope { env: BanditEnvironment, target: Vec<Vec<f64>>, truth: f64 },
    Rl(ChainMdp),
}

fn prepare(config: &ExperimentConfig) -> Result<Shared, CliError> {
    Ok(match &config.params {
        Params::Safeltr(p) => Shared::Safeltr(
            config
                .seeds
                .par_iter()
                .map(|&s| Ok((s, World::build(&p.world, s)?)))
                .collect::<Result<Vec<_>, cltrlab::Error>>()?,
        ),
        Params::Opl(p) => Shared::Opl(BanditEnvironment::generate(&p.env)?),
        Params::Ope(p) => {
            let env = BanditEnvironment::generate(&p.env)?;
            let target = fit_target_policy(&env, p.target_rows, &p.target_train)?.table(env.contexts());
            let truth = env.true_value(&target);
            Shared::Ope { env, target, truth }
        }
        Params::Rl(p) => Shared::Rl(ChainMdp::generate(&p.chain)?),
    })
}

fn metrics(config: &ExperimentConfig, shared: &Shared, cell: &Cell) -> Result<Vec<(&'static str, f64)>, cltrlab::Error> {
    let (seed, n) = (cell.seed, cell.grid);
    Ok(match (&config.methods[cell.method].spec, &config.params, shared) {
        (MethodSpec::Safeltr(m), Params::Safeltr(p), Shared::Safeltr(worlds)) => {
            let world = &worlds.iter().find(|(s, _)| *s == seed).expect("world built for every seed").1;
            let r = run_cell(world, m, n, &p.train, seed)?;
            vec![
                ("test_ndcg", r.test_ndcg),
                ("logging_ndcg", r.logging_ndcg),
                ("ndcg_gain", r.test_ndcg - r.logging_ndcg),
                ("best_epoch", r.best_epoch as f64),
            ]
        }
        (MethodSpec::Opl(m), Params::Opl(p), Shared::Opl(env)) => {
            let log = env.simulate(n, &mut rng_from_seed(derive_seed(seed, 0)));
            let out = train_opl(env, &log, *m, &OplConfig { seed, ..p.train.clone() })?;
            vec![
                ("final_value", out.final_value),
                ("logging_value", env.true_value(env.logging_probs())),
                ("grad_variance", out.mean_grad_variance()),
            ]
        }
        (MethodSpec::Ope(e), Params::Ope(p), Shared::Ope { env, target, truth }) => {
            let log = env.simulate(n, &mut rng_from_seed(derive_seed(seed, n as u64)));
            let est = ope_estimate(&log, target, *e, env.n_actions(), p.ridge)?;
            vec![("estimate", est), ("error", est - truth), ("squared_error", (est - truth).powi(2))]
        }
        (MethodSpec::Rl(m), Params::Rl(p), Shared::Rl(mdp)) => {
            let inner_epochs = if m.on_policy() { 1 } else { p.train.inner_epochs };
            let out = train_rl(mdp, *m, &RlConfig { epochs: n, seed, inner_epochs, ..p.train.clone() })?;
            let window = p.final_window.unwrap_or(10).min(n);
            let last = out.trace.last().expect("at least one epoch");
            vec![("final_reward", out.final_reward(window)), ("final_grad_norm", last.grad_norm)]
        }
        _ => unreachable!("method and parameters are resolved for the same family"),
    })
}

fn cell_file(dir: &Path, config: &ExperimentConfig, cell: &Cell) -> PathBuf {
    let label: String = config.methods[cell.method]
        .label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '-' })
        .collect();
    dir.join(format!("{:05}_{label}_{}_{}.csv", cell.index, cell.grid, cell.seed))
}

/// Runs every cell. Files are written even when some cells fail, in which case
/// the manifest lists the failures and [`CliError::Partial`] is returned.
pub fn run(config: &ExperimentConfig, options: &RunOptions) -> Result<RunReport, CliError> {
    let out = config.resolved_output_dir();
    let cells_dir = out.join(CELLS_DIR);
    if cells_dir.exists() {
        fs::remove_dir_all(&cells_dir)?;
    }
    fs::create_dir_all(&cells_dir)?;

    let mut cells = Vec::new();
    for method in 0..config.methods.len() {
        for &grid in &config.grid {
            for &seed in &config.seeds {
                cells.push(Cell { index: cells.len(), method, grid, seed });
            }
        }
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = options.workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| CliError::Config(format!("worker pool: {e}")))?;

    let results: Vec<Result<Vec<RunRow>, String>> = pool.install(|| -> Result<_, CliError> {
        let shared = prepare(config)?;
        Ok(cells
            .par_iter()
            .map(|cell| {
                let label = &config.methods[cell.method].label;
                let rows: Vec<RunRow> = metrics(config, &shared, cell)
                    .map_err(|e| e.to_string())?
                    .into_iter()
                    .map(|(metric, value)| RunRow { method: label.clone(), grid: cell.grid, seed: cell.seed, metric: metric.into(), value })
                    .collect();
                write_csv(&cell_file(&cells_dir, config, cell), &rows).map_err(|e| e.to_string())?;
                Ok(rows)
            })
            .collect())
    })?;

    let mut runs = Vec::new();
    let mut failed = Vec::new();
    for (cell, res) in cells.iter().zip(results) {
        match res {
            Ok(rows) => runs.extend(rows),
            Err(error) => failed.push(FailedCell {
                method: config.methods[cell.method].label.clone(),
                grid: cell.grid,
                seed: cell.seed,
                error,
            }),
        }
    }
    let summary = summarize(&runs, config.ci_level)?;
    let manifest = Manifest {
        name: config.name.clone(),
        family: config.family.name().to_string(),
        config_hash: config.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        core_version: cltrlab::VERSION.to_string(),
        seeds: config.seeds.clone(),
        grid: config.grid.clone(),
        methods: config.methods.iter().map(|m| m.label.clone()).collect(),
        ci_level: config.ci_level,
        n_cells: cells.len(),
        complete: failed.is_empty(),
        failed,
    };
    write_csv(&out.join(RUNS_FILE), &runs)?;
    write_csv(&out.join(SUMMARY_FILE), &summary)?;
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    if !manifest.complete {
        return Err(CliError::Partial { failed: manifest.failed.len(), total: cells.len() });
    }
    Ok(RunReport { output_dir: out, runs, summary, manifest })
}

/// Recomputes `summary.csv` in `dir` from its `runs.csv`.
pub fn resummarize(dir: &Path, ci_level: f64) -> Result<Vec<SummaryRow>, CliError> {
    let runs = crate::summary::read_runs(&dir.join(RUNS_FILE))?;
    let summary = summarize(&runs, ci_level)?;
    write_csv(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
