//! Pipeline orchestration binary: each processing stage is a subcommand
//! reading the shared config, writing plain-file artifacts plus a manifest.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::PipelineConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration (exit 1).
    Usage(String),
    /// Bad or missing data artifacts (exit 2).
    Data(String),
    /// Calibration constraints cannot be satisfied (exit 3).
    Infeasible(String),
}

impl From<proxclass_core::Error> for CliError {
    fn from(e: proxclass_core::Error) -> Self {
        match e {
            proxclass_core::Error::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Infeasible(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Infeasible(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "proxclass",
    version,
    about = "Multi-channel (BLE + 802.11) proximity classification pipeline"
)]
struct Cli {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override any config key (repeatable), e.g. --set match.window_s=2.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and normalize the raw capture logs.
    Ingest,
    /// Recover device traces and join BLE with both 802.11 bands.
    Match,
    /// Solve per-device RSSI corrections from distance profiles.
    Calibrate,
    /// Balance, sample, and split the matched data.
    Prep,
    /// Train the 13-model roster per device.
    Train,
    /// Evaluate trained models on the eval split and scenario holdouts.
    Eval,
    /// Score one run's BLE trace through the threshold exposure pipeline.
    Gaen {
        /// Run to score.
        #[arg(long)]
        run: String,
        /// Sending device; required when the run has several.
        #[arg(long)]
        device: Option<String>,
    },
    /// Generate synthetic capture logs plus ground truth from a plan.
    Synth,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let config = match PipelineConfig::load(
        cli.config.as_deref(),
        cli.seed,
        cli.out.as_deref(),
        &cli.set,
    ) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}", e.message());
            return ExitCode::from(e.exit_code());
        }
    };

    let result = match &cli.command {
        Command::Ingest => commands::ingest::run(&config),
        Command::Match => commands::match_cmd::run(&config),
        Command::Calibrate => commands::calibrate::run(&config),
        Command::Prep => commands::prep::run(&config),
        Command::Train => commands::train::run(&config),
        Command::Eval => commands::eval::run(&config),
        Command::Gaen { run, device } => commands::gaen::run(&config, run, device.as_deref()),
        Command::Synth => commands::synth::run(&config),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
