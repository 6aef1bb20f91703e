mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cmachain::cma::Regime;

use config::{Experiment, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(cmachain::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<cmachain::Error> for CliError {
    fn from(e: cmachain::Error) -> Self {
        match e {
            cmachain::Error::RegimeMismatch(_) | cmachain::Error::InvalidHyperparameters(_) => CliError::Config(e.to_string()),
            other => CliError::Numeric(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cmachain", version, about = "Run CMA-ES chain experiments from a TOML config")]
struct Cli {
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the regime detected from (c_sigma, c_c); must agree with the rates.
    #[arg(long, global = true, value_parser = parse_regime)]
    regime: Option<Regime>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    replicas: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    Regime::parse(s).ok_or_else(|| format!("expected one of i, ii, iii, iv, got `{s}`"))
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Raw and normalized trajectory CSVs.
    Run,
    /// Convergence rate per replica (JSONL).
    Rate,
    /// Per-step log-progress decomposition (JSONL).
    Decompose,
    /// Ranked-block density against a sampled histogram (CSV, d = 1).
    DensityCheck,
    /// Steering path to the target state (JSONL).
    ControlPath,
    /// Finite-difference rank of the control Jacobian (JSON).
    JacobianRank,
    /// Hitting frequencies and a stationarity check (JSONL).
    Probe,
}

fn execute(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("missing --config PATH".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let ov = Overrides {
        seed: cli.seed,
        steps: cli.steps,
        replicas: cli.replicas,
        out: cli.out.clone(),
        regime: cli.regime,
    };
    let exp = Experiment::load(&text, &ov)?;
    std::fs::create_dir_all(&exp.out)?;
    match cli.command {
        Command::Run => commands::run(&exp),
        Command::Rate => commands::rate(&exp),
        Command::Decompose => commands::decompose(&exp),
        Command::DensityCheck => commands::density_check(&exp),
        Command::ControlPath => commands::control_path(&exp),
        Command::JacobianRank => commands::jacobian_rank(&exp),
        Command::Probe => commands::probe(&exp),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
