mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "rpn2",
    version,
    about = "Build, train and check interdependence-aware polynomial networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON config for the command.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed recorded in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build one interdependence matrix and write it in Matrix Market form.
    BuildMatrix {
        #[command(flatten)]
        common: Common,
        /// Output `.mtx` path; stats go to `<stem>.stats.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write metrics and a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory for the output files named in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a backbone with its equivalent model.
    Equiv {
        #[command(flatten)]
        common: Common,
    },
    /// Report ranks and norms of every interdependence station.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Output JSON path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData { common, out } => {
            commands::gen_data(config::load(&common.config)?, &out, common.seed)?;
        }
        Command::BuildMatrix { common, out } => {
            let stats = commands::build_matrix(config::load(&common.config)?, &out, common.seed)?;
            println!("{}", serde_json::to_string(&stats)?);
        }
        Command::Train { common, out } => {
            if let Some(dir) = &out {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("creating {}", dir.display()))?;
            }
            let (metrics, checkpoint) =
                commands::run_train(config::load(&common.config)?, out.as_deref(), common.seed)?;
            println!("wrote {} and {}", metrics.display(), checkpoint.display());
        }
        Command::Equiv { common } => {
            let report = commands::equiv(config::load(&common.config)?, common.seed)?;
            println!("{}", report.line());
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Diagnose { common, out } => {
            commands::diagnose(config::load(&common.config)?, out.as_deref(), common.seed)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::from(2)
        }
    }
}
