//! `uirm` — batch-experiment front end for the toolkit.
//!
//! Exit codes: 0 success, 2 configuration/input error, 3 domain or capacity
//! error, 4 numeric failure.

mod commands;
mod config;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use uirm_core::Error as CoreError;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, missing files, malformed input. Exit 2.
    Config(String),
    /// Errors surfaced by the library.
    Core(CoreError),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                CoreError::Io(_) | CoreError::Parse { .. } => 2,
                CoreError::Domain(_)
                | CoreError::DimensionMismatch(_)
                | CoreError::InvalidEnv { .. }
                | CoreError::KernelCapacity { .. }
                | CoreError::DegenerateShift(_) => 3,
                CoreError::Numeric(_) => 4,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

#[derive(Parser)]
#[command(
    name = "uirm",
    version,
    about = "Invariant projections, environment-factorized autoencoders, transfer, and probes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic multi-environment linear-Gaussian data.
    GenScm {
        /// JSON run configuration (defaults used when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed override (stochastic commands require a seed somewhere).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the invariant projection and report per-environment variances.
    Pica {
        /// Directory produced by gen-scm.
        #[arg(long, conflicts_with_all = ["cov1", "cov2"])]
        data: Option<PathBuf>,
        /// Covariance tensor for environment 0.
        #[arg(long, requires = "cov2")]
        cov1: Option<PathBuf>,
        /// Covariance tensor for environment 1.
        #[arg(long, requires = "cov1")]
        cov2: Option<PathBuf>,
        /// Number of invariant directions to keep.
        #[arg(long)]
        dr: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover planted mixing matrices with the probabilistic estimator.
    Ppica {
        /// Directory produced by gen-scm.
        #[arg(long)]
        data: PathBuf,
        /// Latent dimension of both mixing matrices.
        #[arg(long)]
        d: Option<usize>,
        /// Second environment's latent variance; trace ratio when omitted.
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the SMNIST or SCMNIST environment datasets from raw MNIST.
    BuildDatasets {
        /// Directory holding the four standard MNIST IDX files.
        #[arg(long)]
        mnist_dir: PathBuf,
        #[arg(long, value_parser = ["smnist", "scmnist"])]
        variant: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the factorized autoencoder on built datasets.
    TrainViae {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode prior samples into an image grid.
    Generate {
        #[arg(long)]
        model: PathBuf,
        /// Training environment whose latent prior supplies z_e.
        #[arg(long)]
        env: usize,
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Share one invariant latent across the whole row.
        #[arg(long)]
        fix_zinv: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transfer samples into a target environment and score them.
    Transfer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Source environment index, or "unseen" to use a test environment
        /// through the encoder average.
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the four linear probes on a trained model and report accuracies.
    Probe {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the analytic ELBO gradient against central differences.
    Gradcheck,
    /// Full multi-seed probe protocol: train N models, fit the four probes
    /// per model, print the mean ± std accuracy table.
    ReproduceTable1 {
        #[arg(long)]
        mnist_dir: PathBuf,
        #[arg(long, value_parser = ["smnist", "scmnist"])]
        variant: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenScm { config, seed, out } => commands::gen_scm(config.as_deref(), seed, &out),
        Command::Pica {
            data,
            cov1,
            cov2,
            dr,
            config,
            out,
        } => commands::pica(
            data.as_deref(),
            cov1.as_deref(),
            cov2.as_deref(),
            dr,
            config.as_deref(),
            &out,
        ),
        Command::Ppica {
            data,
            d,
            sigma2,
            config,
            out,
        } => commands::ppica(&data, d, sigma2, config.as_deref(), &out),
        Command::BuildDatasets {
            mnist_dir,
            variant,
            out,
        } => commands::build_datasets(&mnist_dir, &variant, &out),
        Command::TrainViae {
            data,
            config,
            seed,
            out,
        } => commands::train_viae(&data, config.as_deref(), seed, &out),
        Command::Generate {
            model,
            env,
            n,
            fix_zinv,
            config,
            seed,
            out,
        } => commands::generate(&model, env, n, fix_zinv, config.as_deref(), seed, &out),
        Command::Transfer {
            model,
            data,
            source,
            target,
            config,
            seed,
            out,
        } => commands::transfer(&model, &data, &source, target, config.as_deref(), seed, &out),
        Command::Probe {
            model,
            data,
            config,
            seed,
            out,
        } => commands::probe(&model, &data, config.as_deref(), seed, &out),
        Command::Gradcheck => commands::gradcheck(),
        Command::ReproduceTable1 {
            mnist_dir,
            variant,
            config,
            seed,
            out,
        } => commands::reproduce_table1(&mnist_dir, &variant, config.as_deref(), seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
