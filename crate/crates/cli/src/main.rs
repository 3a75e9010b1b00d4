//! `invsen` command-line runner.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "invsen", version, about = "Bias-invariant self-expressive subspace clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic union-of-subspaces datasets.
    GenData(GenDataArgs),
    /// Train the embedding networks (and bias heads when lambda > 0).
    Train(TrainArgs),
    /// Cluster datasets with a trained checkpoint and score the result.
    Evaluate(EvaluateArgs),
    /// Combine metrics files into one comparison table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataMode {
    /// Biased train split and decorrelated test split.
    Ood,
    /// One file mixing biased and decorrelated samples.
    Mixed,
    /// One file at the given flip rate.
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaplacianArg {
    Sym,
    Unnormalized,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GenDataArgs {
    /// Flat JSON file of flag values; flags given here take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Ambient dimension.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub n_per: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub bias_strength: Option<f64>,
    /// Bias flip rate of the biased data.
    #[arg(long)]
    pub e: Option<f64>,
    /// Flip rate of the test split in ood mode.
    #[arg(long)]
    pub test_e: Option<f64>,
    #[arg(long)]
    pub label_flip: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<DataMode>,
    /// Fraction of biased samples in mixed mode.
    #[arg(long)]
    pub n_ratio: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Training dataset CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for model.ckpt and history.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_bias: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Hidden widths of the key and query networks, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub head_hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub bias_classes: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub learn_alpha: Option<bool>,
    #[arg(long)]
    pub beta_init: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub resume: Option<bool>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EvaluateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset CSV; repeat for several splits. The split is named after the file stem.
    #[arg(long)]
    pub data: Option<Vec<PathBuf>>,
    /// Number of clusters.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long, value_enum)]
    pub laplacian: Option<LaplacianArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write affinity-<split>.csv.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub save_affinity: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// metrics.json files.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Directory for report.csv and report.txt; the table is always printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn check_threads() -> CliResult<()> {
    match std::env::var("INVSEN_THREADS") {
        Ok(v) if !matches!(v.trim().parse::<usize>(), Ok(n) if n > 0) => {
            Err(CliError::Usage(format!("INVSEN_THREADS must be a positive integer, got {v:?}")))
        }
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    check_threads()?;
    match cli.command {
        Command::GenData(a) => {
            let file = a.config.clone();
            commands::gen_data(config::merge(a, file.as_deref())?)
        }
        Command::Train(a) => {
            let file = a.config.clone();
            commands::train(config::merge(a, file.as_deref())?)
        }
        Command::Evaluate(a) => {
            let file = a.config.clone();
            commands::evaluate(config::merge(a, file.as_deref())?)
        }
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("invsen: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("Try 'invsen --help' for usage.");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
