//! `ped`: multilingual protest event detection toolkit.
//!
//! Subcommands: train, predict, eval, replicate, viz, compare. All
//! randomness flows from one `--seed`; exit codes are 0 (success),
//! 2 (configuration), 3 (data), 4 (transport).

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "ped",
    version,
    about = "Multilingual protest event detection toolkit"
)]
struct Cli {
    /// Override the seed from any config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finetune a backend on document, sentence, or token classification.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the run directory from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Score instances with a trained model and dump prediction JSONL.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Task file written by `train` (defaults to task.json next to the model).
        #[arg(long)]
        task: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score prediction JSONL against gold JSONL.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// document | sentence | token
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        /// Also report the positive-class F1 for binary tasks.
        #[arg(long)]
        positive_only: bool,
    },
    /// Turn a news corpus into dated, geolocated event records.
    Replicate {
        #[arg(long)]
        config: PathBuf,
        /// Force the fixture-backed geocoder regardless of the config.
        #[arg(long)]
        mock_geocoder: bool,
    },
    /// Emit 2-D scatter data of tf-idf or model features.
    Viz {
        #[arg(long)]
        config: PathBuf,
    },
    /// Diff result scores against the bundled reference table.
    Compare {
        #[arg(long)]
        results: PathBuf,
        /// Alternative reference CSV (defaults to the bundled table).
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Restrict the reference to one model's rows, e.g. "case21-best".
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), error::CliError> {
    match cli.command {
        Command::Train { config, out_dir } => commands::cmd_train(&config, cli.seed, out_dir),
        Command::Predict {
            model,
            task,
            input,
            out,
        } => commands::cmd_predict(&model, task, &input, &out, cli.seed),
        Command::Eval {
            pred,
            gold,
            kind,
            out,
            positive_only,
        } => commands::cmd_eval(&pred, &gold, &kind, &out, positive_only),
        Command::Replicate {
            config,
            mock_geocoder,
        } => commands::cmd_replicate(&config, mock_geocoder, cli.seed),
        Command::Viz { config } => commands::cmd_viz(&config, cli.seed),
        Command::Compare {
            results,
            reference,
            baseline,
            out,
        } => commands::cmd_compare(&results, reference, baseline, out),
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
