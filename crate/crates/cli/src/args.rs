use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "deepkern", version, about = "Effective kernels for deep Gaussian processes")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw functions from one or more kernels on a 1-D grid.
    SamplePrior(SamplePriorArgs),
    /// Generate a synthetic regression dataset.
    GenData(GenDataArgs),
    /// Fit kernel hyperparameters by maximizing the log marginal likelihood.
    Fit(FitArgs),
    /// Posterior predictive mean and variance from a fit report.
    Predict(PredictArgs),
    /// Final log marginal likelihood against log chi for a three-layer SE fit.
    ChiSweep(ChiSweepArgs),
    /// Check analytic second and fourth moments against simulation.
    Moments(MomentsArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// JSON object of option values; explicit flags take precedence.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Grid {
    #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
    pub grid_lo: f64,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub grid_hi: f64,
    #[arg(long, default_value_t = 200)]
    pub grid_n: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SamplePriorArgs {
    #[command(flatten)]
    pub common: Common,
    /// Kernel as inline JSON, a JSON file, or a label such as `SE[SE]`. Repeat
    /// to draw every kernel from the same standard-normal vectors.
    #[arg(long, required = true, action = clap::ArgAction::Append)]
    pub kernel: Vec<String>,
    #[arg(long, default_value_t = 3)]
    pub n_functions: usize,
    #[command(flatten)]
    pub grid: Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Generator {
    TwoScale,
    PureNoise,
    FromKernel,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub generator: Generator,
    /// Number of points; defaults to 100, 90 and 150 for the three generators.
    #[arg(long)]
    pub n: Option<usize>,
    /// Observation noise standard deviation; defaults to 0.05, 0.2 and 0.1.
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Kernel for `from_kernel`.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Use the kernel's hyperparameters as given instead of redrawing them.
    #[arg(long)]
    pub keep_params: bool,
    #[arg(long, default_value_t = 1.0)]
    pub long_signal: f64,
    #[arg(long, default_value_t = 2.0)]
    pub long_length: f64,
    #[arg(long, default_value_t = 0.3)]
    pub short_signal: f64,
    #[arg(long, default_value_t = 0.15)]
    pub short_length: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub kernel: String,
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    /// Likelihood evaluations per restart.
    #[arg(long, default_value_t = 2000)]
    pub budget: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training CSV the report was fitted on.
    #[arg(long)]
    pub data: PathBuf,
    /// Output of `fit`.
    #[arg(long)]
    pub report: PathBuf,
    /// CSV whose inputs are the prediction points; a 1-D grid otherwise.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub grid: Grid,
    /// Add the observation noise to the predictive variance.
    #[arg(long)]
    pub with_noise: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ChiSweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// Generator kernel labels; the non-periodic compositions by default.
    #[arg(long, value_delimiter = ',')]
    pub generators: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub draws: usize,
    #[arg(long, default_value_t = 150)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    #[arg(long, default_value_t = 2000)]
    pub budget: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MomentsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub kernel: String,
    /// 1-D probe inputs.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [0.0, 0.5, 1.0, 2.0])]
    pub points: Vec<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    /// Allowed Monte-Carlo discrepancy in standard errors.
    #[arg(long, default_value_t = 4.0)]
    pub n_se: f64,
    /// Offset added to every analytic fourth moment (harness self-test).
    #[arg(long, default_value_t = 0.0, hide = true, allow_negative_numbers = true)]
    pub corrupt: f64,
}
