//! `admitqa` command-line driver.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const OUT_ENV: &str = "ADMITQA_OUT";

#[derive(Parser, Debug)]
#[command(name = "admitqa", version, about = "Admitting-ignorance experiments on a synthetic video QA world")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = "out")]
    pub out: PathBuf,
    /// Sets every run seed (dataset, model, training, evaluation).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Config override `section.key=value`, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a dataset.
    Gen,
    /// Train a model, writing a checkpoint and per-epoch metrics.
    Train {
        /// Dataset directory from `gen`; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test splits.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and evaluate one run per grid value and seed.
    Sweep {
        /// p_r, displacement_ratio, schedule or mode.
        #[arg(long)]
        axis: String,
        /// Comma-separated grid; the config's sweep grid when omitted.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<String>,
        /// Comma-separated seeds; the config's sweep seeds when omitted.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Finite-difference check of the analytic gradients.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Merge JSON artifacts in a directory into a summary.
    Report {
        /// Directory to scan; the output directory when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
