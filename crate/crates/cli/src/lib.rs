//! Command-line experiment runner.
//!
//! `fedloc simulate | verify | uji | bound`, each taking `--config`, `--out`,
//! `--seed` and `--desk-scale`. Exit codes: 0 on success, 1 for invalid
//! input, 2 for runtime failures.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod bound;
pub mod config;
pub mod output;
pub mod simulate;
pub mod uji;
pub mod verify;

pub use config::ExperimentConfig;

/// Bad configuration or arguments. Maps to exit code 1.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ValidationError(pub String);

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fedloc", version, about = "Federated fingerprint localization experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML experiment configuration
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `out_dir` from the config
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Master seed, overriding `seed` from the config
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Fewer rounds and databases for a quick run
    #[arg(long, global = true)]
    pub desk_scale: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train centralized and federated models on the simulated scenarios
    Simulate,
    /// Run the coverage characteristic experiments
    Verify,
    /// Multi-floor pipeline on the UJIIndoorLoc dataset
    Uji,
    /// Evaluate the federated convergence bound
    Bound(bound::BoundArgs),
}

/// Config after `--config`, `--seed`, `--out` and `--desk-scale` are
/// applied, validated.
pub fn resolve_config(common: &CommonArgs) -> Result<(ExperimentConfig, PathBuf), ValidationError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.desk_scale {
        cfg.desk_scale();
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok((cfg.clone(), cfg.out_dir))
}

fn exit_code(err: &anyhow::Error) -> i32 {
    let validation = err.chain().any(|e| {
        e.downcast_ref::<ValidationError>().is_some()
            || matches!(e.downcast_ref::<fedloc_core::Error>(), Some(fedloc_core::Error::BoundInapplicable(_)))
    });
    if validation {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

pub fn execute(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Simulate => simulate::run(&cli.common),
        Command::Verify => verify::run(&cli.common),
        Command::Uji => uji::run(&cli.common),
        Command::Bound(args) => bound::run(&cli.common, args),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
