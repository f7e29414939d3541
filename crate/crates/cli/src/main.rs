use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cltrlab_cli::{resummarize, run, CliError, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "cltrlab", version, about = "Run counterfactual ranking, bandit and RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every (method, grid point, seed) cell of a config
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads (default: all cores)
        #[arg(long)]
        workers: Option<usize>,
        /// Added to every seed in the config
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Rebuild summary.csv from the runs.csv in a result directory
    Summarize {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        ci: f64,
    },
    /// Parse and check a config without running it
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, workers, seed_offset } => {
            let cfg = ExperimentConfig::from_path(&config)?.with_seed_offset(seed_offset);
            let report = run(&cfg, &RunOptions { workers })?;
            println!(
                "{}: {} cells, {} summary rows -> {}",
                cfg.name,
                report.manifest.n_cells,
                report.summary.len(),
                report.output_dir.display()
            );
        }
        Command::Summarize { dir, ci } => {
            let rows = resummarize(&dir, ci)?;
            for r in rows {
                println!("{:<32} {:>8} {:<16} {:>10.5} [{:.5}, {:.5}] n={}", r.method, r.grid, r.metric, r.mean, r.ci_low, r.ci_high, r.n_runs);
            }
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            println!(
                "ok: {} ({}), {} methods x {} grid points x {} seeds",
                cfg.name,
                cfg.family.name(),
                cfg.methods.len(),
                cfg.grid.len(),
                cfg.seeds.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
