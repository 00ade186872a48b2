//! Batch experiment runner for the carnot library. One JSON config per
//! experiment; results land in CSV/JSON artifacts with a provenance
//! side-car, and reruns with the same config are byte-identical.
//!
//! Exit codes: 0 success, 1 invariant violation, 2 config/schema
//! problem, 3 numerical failure.

mod config;
mod output;
mod runs;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use carnot::integrate::IntegrateError;
use carnot::poincare::PoincareError;
use carnot::sobolev::SobolevError;

use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Schema(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Invariant(_) => 1,
            CliError::Schema(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

/// Input-rejection errors are config problems; only failures that arise
/// while estimating count as numerical.
pub(crate) fn from_integrate(e: IntegrateError) -> CliError {
    match &e {
        IntegrateError::BadConfig { .. }
        | IntegrateError::NoRejectionBox
        | IntegrateError::GridUnsupported { .. } => CliError::Schema(e.to_string()),
        IntegrateError::ZeroAcceptance { .. }
        | IntegrateError::NonFiniteSample
        | IntegrateError::Quadrature(_) => CliError::Numerical(e.to_string()),
    }
}

pub(crate) fn from_sobolev(e: SobolevError) -> CliError {
    match e {
        SobolevError::NonFiniteField => CliError::Numerical(e.to_string()),
        SobolevError::Integrate(inner) => from_integrate(inner),
        _ => CliError::Schema(e.to_string()),
    }
}

pub(crate) fn from_poincare(e: PoincareError) -> CliError {
    match e {
        // Construction-time grid shape is validated before any sample is
        // built, so a surviving BadGrid is the trapezoid drift gate.
        PoincareError::BadGrid { .. } => CliError::Numerical(e.to_string()),
        PoincareError::Sobolev(inner) => from_sobolev(inner),
        PoincareError::Integrate(inner) => from_integrate(inner),
        _ => CliError::Schema(e.to_string()),
    }
}

#[derive(Parser)]
#[command(
    name = "carnot",
    version,
    about = "Experiment runner for stratified-group functional inequalities"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's Monte Carlo sample count
    #[arg(long)]
    samples: Option<usize>,
    /// Artifact path (default: <subcommand>.csv or .json)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the structure of a built-in group
    GroupInfo {
        /// Group name (alternative to --config)
        group: Option<String>,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Monte Carlo estimate of the unit-ball volume constant
    CbEstimate {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Limit constant kappa, with kappa_n rows when a mollifier is configured
    Kappa {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Difference-functional convergence table over a mollifier index list
    BbmConverge {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Unit-interval Poincaré inequality on a 1-D fixture
    #[command(name = "poincare-1d")]
    Poincare1d {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Ball Poincaré inequality on a group (weighted or mollifier form)
    PoincareBall {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Fractional ball inequality across an s list
    Fractional {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Built-in invariant sweep
    Selftest,
}

fn main() {
    init_threads();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.code());
        }
    }
}

/// CARNOT_BBM_THREADS caps the rayon pool. Estimates are chunk-ordered,
/// so the thread count never changes results, only wall time.
fn init_threads() {
    if let Ok(v) = std::env::var("CARNOT_BBM_THREADS") {
        if let Ok(k) = v.parse::<usize>() {
            if k >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build_global();
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::GroupInfo { group, args } => {
            let (cfg, _raw) = load(&args)?;
            runs::group_info(group.as_deref(), &cfg, args.out.or(cfg.out.clone()).as_deref())
        }
        Cmd::CbEstimate { args } => {
            let (cfg, raw) = load(&args)?;
            let out = artifact_path(&args, &cfg, "cb-estimate.json");
            runs::cb_estimate(&cfg, raw.as_deref(), &out)
        }
        Cmd::Kappa { args } => {
            let (cfg, raw) = load(&args)?;
            let out = artifact_path(&args, &cfg, "kappa.csv");
            runs::run_kappa(&cfg, raw.as_deref(), &out)
        }
        Cmd::BbmConverge { args } => {
            let (cfg, raw) = load(&args)?;
            let out = artifact_path(&args, &cfg, "bbm-converge.csv");
            runs::bbm_converge(&cfg, raw.as_deref(), &out)
        }
        Cmd::Poincare1d { args } => {
            let (cfg, raw) = load(&args)?;
            let out = artifact_path(&args, &cfg, "poincare-1d.csv");
            runs::poincare_1d(&cfg, raw.as_deref(), &out)
        }
        Cmd::PoincareBall { args } => {
            let (cfg, raw) = load(&args)?;
            let out = artifact_path(&args, &cfg, "poincare-ball.csv");
            runs::poincare_ball(&cfg, raw.as_deref(), &out)
        }
        Cmd::Fractional { args } => {
            let (cfg, raw) = load(&args)?;
            let out = artifact_path(&args, &cfg, "fractional.csv");
            runs::fractional(&cfg, raw.as_deref(), &out)
        }
        Cmd::Selftest => runs::selftest(),
    }
}

/// Read the config (if any) and fold the command-line overrides into it.
fn load(args: &RunArgs) -> Result<(ExperimentConfig, Option<Vec<u8>>), CliError> {
    let (mut cfg, raw) = match &args.config {
        Some(path) => {
            let (cfg, raw) = ExperimentConfig::load(path)?;
            (cfg, Some(raw))
        }
        None => (ExperimentConfig::default(), None),
    };
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    if let Some(samples) = args.samples {
        cfg.samples = Some(samples);
    }
    Ok((cfg, raw))
}

fn artifact_path(args: &RunArgs, cfg: &ExperimentConfig, default: &str) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(default))
}
