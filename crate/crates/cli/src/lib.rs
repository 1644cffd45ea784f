//! `mwe` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or domain error, 2 configuration or usage
//! error.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use mwe_core::location::BodyMap;
use mwe_core::swarm::Algorithm;
use mwe_core::wavelet::WaveletFamily;

pub use config::{resolve_seed, ExperimentConfig, SEED_ENV};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] mwe_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "mwe", version, about = "Wound image and location classifier")]
pub struct Cli {
    /// Run every data-parallel section on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, metrics and history.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search training hyperparameters with a swarm optimizer.
    Tune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_algorithm)]
        algorithm: Option<Algorithm>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on every record of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Image root; defaults to the manifest's folder.
        #[arg(long)]
        root: Option<PathBuf>,
        /// Defaults to the map recorded in the checkpoint.
        #[arg(long, value_parser = parse_map)]
        map: Option<BodyMap>,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Report parameters, GFlops and a memory estimate for a model config.
    Complexity {
        #[arg(long)]
        config: PathBuf,
        /// Batch for the memory estimate; defaults to the train batch size.
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the 9-bit code of a body-map location.
    EncodeLocation {
        id: usize,
        #[arg(long, value_parser = parse_map, default_value = "original-484")]
        map: BodyMap,
    },
    /// Decompose an image and report subband energies.
    DwtDump {
        image: PathBuf,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, value_parser = parse_family, default_value = "haar")]
        family: WaveletFamily,
        #[arg(long, default_value_t = 1)]
        levels: usize,
        /// Also write every coefficient to `subbands.csv` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: mwe_core::Error| e.to_string())
}

fn parse_map(s: &str) -> Result<BodyMap, String> {
    s.parse().map_err(|e: mwe_core::Error| e.to_string())
}

fn parse_family(s: &str) -> Result<WaveletFamily, String> {
    s.parse().map_err(|e: mwe_core::Error| e.to_string())
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code. Reports go to stdout, diagnostics to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
