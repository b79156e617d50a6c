//! `mdn`: generate datasets, train full-covariance MDNs, sample and evaluate them.
//!
//! Exit codes: 0 success, 2 usage or parse error, 3 numeric failure.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mdn_core::{Activation, CovarianceMode, LossKind, MdnError};

#[derive(Debug, Parser)]
#[command(name = "mdn", version, about = "Mixture density networks with full-covariance components")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    Generate(GenerateArgs),
    /// Train a model, write a checkpoint and a JSON report.
    Train(TrainArgs),
    /// Draw samples from a trained model at a fixed condition.
    Sample(SampleArgs),
    /// Export log-densities on a 2-D grid.
    Density(DensityArgs),
    /// Mean exact negative log-likelihood of a dataset.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GenerateArgs {
    /// rotating_gaussian, two_moons_conditional or mixture_ring.
    #[arg(long = "gen")]
    pub generator: String,
    /// Number of samples.
    #[arg(long = "n", default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path; stdout when omitted or `-`.
    #[arg(long)]
    pub out: Option<String>,
    /// rotating_gaussian minor/major variance ratio.
    #[arg(long)]
    pub aspect: Option<f64>,
    /// mixture_ring mode count.
    #[arg(long)]
    pub modes: Option<usize>,
    /// mixture_ring radius.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Isotropic noise std for mixture_ring and two_moons_conditional.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    /// Training dataset CSV (`-` for stdin).
    #[arg(long)]
    pub data: String,
    /// Validation dataset CSV.
    #[arg(long)]
    pub val: Option<String>,
    /// Mixture components.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value = "full")]
    pub mode: CovarianceMode,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "128,128")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value = "tanh")]
    pub activation: Activation,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.2)]
    pub warmup_fraction: f64,
    #[arg(long, default_value = "weighted_jensen")]
    pub warmup_loss: LossKind,
    #[arg(long, default_value = "exact_nll")]
    pub main_loss: LossKind,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    #[arg(long, default_value_t = 10.0)]
    pub clip_norm: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "model.ckpt")]
    pub checkpoint: String,
    #[arg(long, default_value = "report.json")]
    pub report: String,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: String,
    /// Condition values, comma separated (M entries).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub y: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Draw every sample from this component.
    #[arg(long)]
    pub component: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct DensityArgs {
    #[arg(long)]
    pub checkpoint: String,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub y: Vec<f64>,
    /// Lower grid bound on both axes.
    #[arg(long, allow_negative_numbers = true, default_value_t = -5.0)]
    pub lo: f64,
    /// Upper grid bound on both axes.
    #[arg(long, allow_negative_numbers = true, default_value_t = 5.0)]
    pub hi: f64,
    #[arg(long, default_value_t = 0.05)]
    pub step: f64,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: String,
    #[arg(long)]
    pub data: String,
}

fn exit_code(err: &MdnError) -> ExitCode {
    if err.is_numeric() {
        ExitCode::from(3)
    } else {
        ExitCode::from(2)
    }
}

fn main() -> ExitCode {
    let args = match config::expand_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Sample(a) => commands::sample(&a),
        Command::Density(a) => commands::density(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
