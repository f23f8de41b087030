//! `attnlab`: train, evaluate, sweep and probe single-head attention models.
//!
//! Results go to files under `--out` (default `$ATTNLAB_OUT`, else
//! `results`); progress goes to standard error. Exit status is 0 on success,
//! 1 for bad flags, configs or inputs, and 2 when a run fails.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use attnlab_core::harness::Variant;
use attnlab_core::Error;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "attnlab", version, about = "Length generalization lab for single-head attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file; keys not given keep their defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, value_name = "DIR", env = "ATTNLAB_OUT", default_value = "results")]
    pub out: PathBuf,
    /// Root seed; overrides the config's `seed`.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads for sweeps (default: available cores).
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
    /// Overwrite existing result files.
    #[arg(long)]
    pub force: bool,
    /// Config override such as `task.key_classes=1024`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model and write checkpoint.json.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint over its length sweep and write eval.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Train and evaluate every (seed, variant) pair and write eval.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds starting at the root seed.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Comma-separated variants such as `none,layernorm+adaptive`.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Variant>,
        /// Also write one checkpoint per trained model.
        #[arg(long)]
        save_checkpoints: bool,
    },
    /// Variance, drift and dispersion probes on trained checkpoints.
    Probe {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to probe; repeat to compare normalization modes.
        #[arg(long, value_name = "PATH", required = true)]
        checkpoint: Vec<PathBuf>,
    },
    /// Variance decay of a frozen random attention layer on i.i.d. tokens.
    Prop1 {
        #[command(flatten)]
        common: Common,
    },
    /// Paired t-tests between two variants of a sweep's eval.csv.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "layernorm")]
        a: Variant,
        #[arg(long, default_value = "none")]
        b: Variant,
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Train { common } => commands::train(&common),
        Command::Eval { common, checkpoint } => commands::eval(&common, &checkpoint),
        Command::Sweep {
            common,
            seeds,
            variants,
            save_checkpoints,
        } => commands::sweep(&common, seeds, &variants, save_checkpoints),
        Command::Probe { common, checkpoint } => commands::probe(&common, &checkpoint),
        Command::Prop1 { common } => commands::prop1(&common),
        Command::Compare { common, a, b, input } => commands::compare(&common, a, b, &input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}

/// Marks an error in reading user-supplied input as a config error.
pub fn input_error(what: &std::path::Path, e: Error) -> Error {
    Error::Config(format!("{}: {e}", what.display()))
}
