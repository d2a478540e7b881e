use std::path::PathBuf;
use std::process::exit;
use std::str::FromStr;

use clap::{error::ErrorKind, Parser, Subcommand};

use maskdiff::cli;
use maskdiff::TrainMode;

/// Relevance-masked denoising diffusion: train, sample, evaluate.
#[derive(Parser)]
#[command(name = "maskdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint.json, trace.csv, manifest.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// "xddpm" (masked joint objective) or "ddpm-baseline".
        #[arg(long, default_value = "xddpm")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate samples from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on its regenerated dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional config override for the dataset to evaluate against.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of samples to generate for the report.
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check analytic gradients of all losses against finite differences.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        /// Deliberately corrupt the analytic gradients (negative control).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Train both modes on identical data/seeds and compare convergence.
    #[command(name = "compare-speed")]
    CompareSpeed {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(command: Command) -> maskdiff::Result<()> {
    match command {
        Command::Train { config, mode, out } => {
            let mode = TrainMode::from_str(&mode)?;
            cli::run_train(&config, mode, &out)
        }
        Command::Sample {
            checkpoint,
            n,
            seed,
            out,
        } => cli::run_sample(&checkpoint, n, seed, &out),
        Command::Evaluate {
            checkpoint,
            config,
            n,
            seed,
            out,
        } => cli::run_eval(&checkpoint, config.as_deref(), n, seed, &out),
        Command::Gradcheck { config, corrupt } => cli::run_gradcheck(&config, corrupt),
        Command::CompareSpeed { config, out } => cli::run_compare_speed(&config, &out),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            exit(code);
        }
    };
    if let Err(err) = run(cli.command) {
        eprintln!("error: {err}");
        exit(err.exit_code());
    }
}
