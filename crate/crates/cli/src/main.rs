//! `bpre`: validation, spectral reports, calibration, oracles, estimators
//! and limit verification for branching processes in a Markovian random
//! environment.
//!
//! Exit codes: 0 success, 1 a check ran and failed, 2 invalid input or a
//! runtime error.

mod commands;
mod model_file;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "bpre",
    version,
    about = "Branching processes in a Markovian random environment"
)]
pub struct Cli {
    /// Worker threads for Monte Carlo runs (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Write the result here instead of stdout.
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check stochasticity, primitivity and offspring moments.
    Validate {
        model: PathBuf,
        /// Emit JSON instead of the readable summary.
        #[arg(long)]
        json: bool,
    },
    /// Regime classification as JSON.
    Classify { model: PathBuf },
    /// `k(λ)`, `K'`, `K''` and the spectral gap on a λ grid, as CSV.
    Kcurve {
        model: PathBuf,
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
        to: f64,
        #[arg(long, default_value_t = 0.25)]
        step: f64,
    },
    /// Shift all offspring means to reach a regime; writes a model file.
    Calibrate {
        model: PathBuf,
        #[arg(long, value_enum)]
        target: Target,
        /// Margin `-K'(1)` for `--target strong`.
        #[arg(long)]
        margin: Option<f64>,
        /// Critical tilt for `--target weak`.
        #[arg(long)]
        lambda: Option<f64>,
        /// Name recorded in the output file.
        #[arg(long)]
        name: Option<String>,
    },
    /// Exact survival table at generation n, as CSV.
    Oracle {
        model: PathBuf,
        #[arg(short)]
        n: usize,
        #[arg(long, value_enum, default_value_t = OracleMethod::Enum)]
        method: OracleMethod,
        /// Population cap M of the dynamic-programming bounds.
        #[arg(long, default_value_t = 200)]
        cap: usize,
    },
    /// Monte Carlo survival table at generation n, as CSV.
    Estimate {
        model: PathBuf,
        #[arg(short)]
        n: usize,
        #[arg(long, value_enum, default_value_t = Estimator::Env)]
        estimator: Estimator,
        /// Tilt for `--estimator tilted`.
        #[arg(long, allow_hyphen_values = true)]
        lambda: Option<f64>,
        #[command(flatten)]
        mc: McArgs,
        /// Population cap for `--estimator population`.
        #[arg(long, default_value_t = bpre_core::simulate::DEFAULT_POPULATION_CAP)]
        cap: u64,
    },
    /// Exit-time statistics of the associated walk, optionally with the
    /// Rayleigh test of the walk conditioned to stay positive; JSON.
    Walk {
        model: PathBuf,
        #[arg(short)]
        n: usize,
        /// Starting level y.
        #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
        y: f64,
        #[arg(long, default_value_t = 0)]
        start: usize,
        /// The walk runs under the tilted chain at this λ, which must centre it.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        lambda: f64,
        #[command(flatten)]
        mc: McArgs,
        /// Also run the Rayleigh test with this many accepted walks.
        #[arg(long)]
        rayleigh: Option<usize>,
    },
    /// Scaled-limit verification for one regime; JSON verdict, exit 0 iff
    /// converged and the factorization residual is within the threshold.
    Verify(VerifyArgs),
    /// Regenerate the bundled fixture models and their reports.
    Fixtures {
        #[arg(long, default_value = "fixtures")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, Args)]
pub struct McArgs {
    #[arg(long, default_value_t = 100_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub regime: RegimeArg,
    /// Generation grid, comma separated (regime default if omitted).
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    /// Samples per start state and grid point (regime default if omitted).
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Drift and residual threshold (regime default if omitted).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Trailing grid points compared with the last one.
    #[arg(long, default_value_t = 3)]
    pub window: usize,
    /// Noise discount in combined standard errors.
    #[arg(long, default_value_t = 3.0)]
    pub sigmas: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Critical,
    Intermediate,
    Strong,
    Weak,
    WeakMidpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleMethod {
    /// Exhaustive enumeration of environment paths.
    Enum,
    /// Lower and upper bounds from truncated convolution powers.
    Dp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Estimator {
    Env,
    Tilted,
    Dual,
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Critical,
    Strong,
    Intermediate,
    Weak,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
