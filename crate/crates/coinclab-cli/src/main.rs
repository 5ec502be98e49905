//! Command line front end for the coinclab library.
//!
//! Every command reads one optional config file, applies the seed
//! precedence (--seed over COINCLAB_SEED over the config), and writes an
//! artifact tree into --out. Exit codes: 2 for configuration and input
//! schema problems, 3 for fit failures, 4 for I/O and encoding errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coinclab::config::{self, Resolved, RunConfig};
use coinclab::io::{read_fits_json, FitsFile};
use coinclab::pipeline;
use coinclab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "coinclab",
    version,
    about = "Simulate and analyze spectrally resolved photon pair detection under heavy background",
    after_help = config::KEY_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a run and write the detected event table.
    Simulate(Common),
    /// Analyze an events file: match pairs, fit, discriminate.
    Analyze {
        /// Events CSV produced by simulate or pipeline (or a real camera).
        #[arg(long)]
        events: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate and analyze into one run directory.
    Pipeline(Common),
    /// Recompute the method comparison curves from an events file.
    Sweep {
        /// Truth-tagged events CSV.
        #[arg(long)]
        events: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Sample the discriminant surface of saved fits onto a grid.
    Ygrid(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration file (key = value lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the artifact tree.
    #[arg(long)]
    out: PathBuf,
    /// RNG seed; overrides the config file and COINCLAB_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Reuse fitted parameters from this JSON file instead of fitting.
    #[arg(long)]
    freeze_fits: Option<PathBuf>,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("COINCLAB_SEED") {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::Config(format!("COINCLAB_SEED must be an unsigned integer, got '{v}'"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("COINCLAB_SEED is not readable: {e}"))),
    }
}

fn resolve(common: &Common) -> Result<Resolved> {
    let cfg = match &common.config {
        Some(path) => config::load(path)?,
        None => RunConfig::default(),
    };
    let seed_override = match common.seed {
        Some(seed) => Some(seed),
        None => env_seed()?,
    };
    cfg.resolve(seed_override)
}

fn frozen_fits(common: &Common) -> Result<Option<FitsFile>> {
    common.freeze_fits.as_deref().map(read_fits_json).transpose()
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate(common) => {
            let res = resolve(common)?;
            pipeline::run_simulate(&res, &common.out)
        }
        Command::Analyze { events, common } => {
            let res = resolve(common)?;
            let frozen = frozen_fits(common)?;
            pipeline::run_analyze(events, &res, frozen.as_ref(), &common.out)
        }
        Command::Pipeline(common) => {
            let res = resolve(common)?;
            let frozen = frozen_fits(common)?;
            pipeline::run_pipeline(&res, frozen.as_ref(), &common.out)
        }
        Command::Sweep { events, common } => {
            let res = resolve(common)?;
            let frozen = frozen_fits(common)?;
            pipeline::run_sweep(events, &res, frozen.as_ref(), &common.out)
        }
        Command::Ygrid(common) => {
            let res = resolve(common)?;
            let fits: &Path = common.freeze_fits.as_deref().ok_or_else(|| {
                Error::Config("ygrid needs --freeze-fits pointing at a saved fits.json".into())
            })?;
            pipeline::run_ygrid(fits, &res, &common.out)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
