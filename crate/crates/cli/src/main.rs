//! `sera`: spike recovery and exponential-sum separation from scattered samples.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use sera::SeraError;

use config::{parse_overrides, RunConfig};

const EXIT_INPUT: u8 = 2;
const EXIT_RECOVERY: u8 = 3;
const EXIT_INTERNAL: u8 = 1;

#[derive(Parser)]
#[command(name = "sera", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a target and its samples.
    Gen(Args),
    /// Solve for quadrature weights on the sample points.
    Weights(Args),
    /// Recover spikes from samples and weights.
    Recover(Args),
    /// Recover exponents and coefficients of an exponential sum.
    Separate(Args),
    /// Run the oracle suite.
    Verify(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Field overrides, `--key value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SERA_THREADS") else {
        return Ok(());
    };
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
            Ok(())
        }
        _ => bail!("SERA_THREADS must be a positive integer, got `{raw}`"),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<SeraError>()) {
        Some(SeraError::Recovery(_)) => EXIT_RECOVERY,
        Some(SeraError::Internal(_)) => EXIT_INTERNAL,
        _ => EXIT_INPUT,
    }
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let (args, cmd): (&Args, fn(&RunConfig) -> Result<()>) = match &cli.command {
        Command::Gen(a) => (a, commands::gen),
        Command::Weights(a) => (a, commands::weights),
        Command::Recover(a) => (a, commands::recover),
        Command::Separate(a) => (a, commands::separate),
        Command::Verify(a) => (a, commands::verify),
    };
    let overrides = parse_overrides(&args.overrides)?;
    if overrides.iter().any(|(k, _)| k == "config") {
        bail!("`--config` must come before the field overrides");
    }
    let cfg = RunConfig::load(args.config.as_deref(), &overrides)?;
    cmd(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
