//! logitsep: train, evaluate, diagnose and benchmark single-logit
//! classifiers from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Exit codes: 0 success, 2 config/input error, 3 numerical failure.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: String) -> Failure {
        Failure { code: 2, message }
    }

    pub fn numeric(message: String) -> Failure {
        Failure { code: 3, message }
    }
}

impl From<logitsep_core::Error> for Failure {
    fn from(e: logitsep_core::Error) -> Failure {
        use logitsep_core::Error::*;
        match e {
            NonFiniteLoss { .. } | AllRunsDiverged(_) => Failure::numeric(e.to_string()),
            _ => Failure::config(e.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    #[value(name = "single_logit")]
    SingleLogit,
    #[value(name = "all_logits")]
    AllLogits,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CounterexampleArg {
    Ce,
    Margin,
}

#[derive(Parser)]
#[command(name = "logitsep", version, about = "Single-logit classification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model per the config file; writes checkpoint, history CSV and
    /// a run manifest.
    Train {
        /// TOML config (or a manifest.json from a previous run).
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path config overrides, e.g. loss.kind=ce (repeatable).
        #[arg(long = "override", short = 'O')]
        overrides: Vec<String>,
        /// Output directory (defaults to config [output].dir, then
        /// $LOGITSEP_OUT_DIR, then the current directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: per-class precision-recall metrics plus a
    /// separation report on the dataset's logits.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset URI: idx:images=..,labels=.. | csv:path | synth:k=..,...
        /// Defaults to the config's [eval].dataset, then [dataset].uri.
        #[arg(long)]
        dataset: Option<String>,
        /// Optional config supplying [eval] defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Treat the first CSV row as a header.
        #[arg(long)]
        csv_header: bool,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Separation diagnostics: on a checkpoint's logits, on a counter-example
    /// construction, or descent-based alignment verdicts for all seven losses.
    Diagnose {
        #[arg(long, conflicts_with = "counterexample")]
        checkpoint: Option<PathBuf>,
        /// Dataset for --checkpoint mode.
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        csv_header: bool,
        /// Inspect a counter-example construction instead of a model.
        #[arg(long, value_enum)]
        counterexample: Option<CounterexampleArg>,
        /// Scale of the ce construction.
        #[arg(long, default_value_t = 10.0)]
        alpha: f64,
        /// Margin hyperparameter (and scale of the margin construction).
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// Run the descent experiment for all seven losses.
        #[arg(long)]
        check_alignment: bool,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 5000)]
        steps: usize,
        #[arg(long, default_value_t = 0.1)]
        step_size: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forward-pass timing sweep over class counts, against the single-logit
    /// baseline.
    Bench {
        /// Optional TOML config providing a [bench] section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "override", short = 'O')]
        overrides: Vec<String>,
        /// Comma-separated class counts, e.g. 1,1024,16384.
        #[arg(long)]
        classes: Option<String>,
        /// Comma-separated backbone widths, or "none" for a bare output layer.
        #[arg(long)]
        backbone: Option<String>,
        #[arg(long)]
        input_dim: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train { config, overrides, out } => commands::train(&config, &overrides, out),
        Command::Eval { checkpoint, dataset, config, csv_header, mode, out } => {
            commands::eval(&checkpoint, dataset, config, csv_header, mode, out)
        }
        Command::Diagnose {
            checkpoint,
            dataset,
            csv_header,
            counterexample,
            alpha,
            gamma,
            check_alignment,
            trials,
            steps,
            step_size,
            seed,
            out,
        } => commands::diagnose(commands::DiagnoseArgs {
            checkpoint,
            dataset,
            csv_header,
            counterexample,
            alpha,
            gamma,
            check_alignment,
            trials,
            steps,
            step_size,
            seed,
            out,
        }),
        Command::Bench {
            config,
            overrides,
            classes,
            backbone,
            input_dim,
            batch,
            reps,
            warmup,
            seed,
            out,
        } => commands::bench(commands::BenchArgs {
            config,
            overrides,
            classes,
            backbone,
            input_dim,
            batch,
            reps,
            warmup,
            seed,
            out,
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
