//! Command-line entry point. Subcommands wire the library into reproducible
//! config-driven runs; see the README for the pipeline walkthrough.
//!
//! Exit codes: 0 success, 1 numeric/training failure, 2 input/config error.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pbglm::{Error, Result};

use commands::PoibinRequest;
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "pbglm",
    version,
    about = "Fit individual-level binary-choice models from precinct-level vote counts"
)]
struct Cli {
    /// Run configuration TOML.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override every seed in the config (fit, split, and simulation use
    /// one knob).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and join the raw CSVs, binarize counts, and cache the dataset.
    Ingest,
    /// Split the dataset, train on the train side, and write the report,
    /// parameters, and loss curves.
    Fit,
    /// Score fitted parameters: weighted R2, losses, weak-label reports.
    Evaluate {
        /// Parameters JSON (from `fit` or `simulate`).
        #[arg(long, value_name = "PATH")]
        params: PathBuf,
    },
    /// Write per-voter predicted probabilities as CSV.
    Predict {
        /// Parameters JSON (from `fit` or `simulate`).
        #[arg(long, value_name = "PATH")]
        params: PathBuf,
    },
    /// Generate a synthetic election from the [synthetic] config section.
    Simulate {
        /// Also emit results.csv, voters.csv, and a matching features.toml.
        #[arg(long)]
        emit_csv: bool,
    },
    /// Poisson binomial utilities: PMF, CDF, moments, Lyapunov ratio.
    Poibin {
        /// Probabilities, comma or space separated.
        #[arg(long, value_name = "LIST", conflicts_with = "p_file")]
        p: Option<String>,
        /// File containing whitespace-separated probabilities.
        #[arg(long, value_name = "PATH")]
        p_file: Option<PathBuf>,
        /// Count to evaluate the PMF and CDF at.
        #[arg(long, value_name = "K")]
        k: Option<u64>,
        /// Print the mean and variance.
        #[arg(long)]
        moments: bool,
        /// Print the Lyapunov fourth-moment ratio.
        #[arg(long)]
        lyapunov: bool,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("this command needs --config <path>".into()))?;
    let mut config = RunConfig::load(path)?;
    config.apply_overrides(cli.seed, cli.out.as_deref());
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest => commands::cmd_ingest(&load_config(&cli)?),
        Command::Fit => commands::cmd_fit(&load_config(&cli)?),
        Command::Evaluate { params } => commands::cmd_evaluate(&load_config(&cli)?, params),
        Command::Predict { params } => commands::cmd_predict(&load_config(&cli)?, params),
        Command::Simulate { emit_csv } => {
            commands::cmd_simulate(&load_config(&cli)?, *emit_csv)
        }
        Command::Poibin {
            p,
            p_file,
            k,
            moments,
            lyapunov,
        } => {
            let text = match (p, p_file) {
                (Some(list), None) => list.clone(),
                (None, Some(path)) => {
                    std::fs::read_to_string(path).map_err(|source| Error::FileOpen {
                        path: path.display().to_string(),
                        source,
                    })?
                }
                _ => {
                    return Err(Error::InvalidInput(
                        "provide exactly one of --p or --p-file".into(),
                    ))
                }
            };
            commands::cmd_poibin(&PoibinRequest {
                probs: commands::parse_prob_list(&text)?,
                k: *k,
                moments: *moments,
                lyapunov: *lyapunov,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 1u8 } else { 2u8 })
        }
    }
}
