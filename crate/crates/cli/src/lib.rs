//! Command-line front end: panel and result file formats, run manifests and
//! the subcommands of the `narvb` binary.

pub mod commands;
pub mod error;
pub mod io;
pub mod manifest;
pub mod verify;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use narvb_core::metrics::NrmseForm;
use narvb_core::sim::CovKind;
use narvb_core::Estimator;

pub use error::{CliError, Result};

#[derive(Debug, Clone, Parser)]
#[command(name = "narvb", version, about = "Sparse network autoregression by variational Bayes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel with known coefficients.
    Simulate(SimulateArgs),
    /// Fit the model and write the selected structure and coefficients.
    Fit(FitArgs),
    /// Fit on the whole panel and forecast the next row.
    Forecast(FitArgs),
    /// Expanding-window one-step-ahead backtest.
    Backtest(BacktestArgs),
    /// Check variational selections against exact enumeration.
    Verify(VerifyArgs),
    /// Score a selection against the truth and/or a backtest.
    Metrics(MetricsArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Named design, e.g. m10UG.
    #[arg(long, required_unless_present = "spec", conflicts_with = "spec")]
    pub scenario: Option<String>,
    /// Scenario JSON instead of a named design.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CovArg::Identity)]
    pub cov: CovArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of rows kept after burn-in.
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long)]
    pub level: Option<f64>,
    /// Replicates with seeds derived from --seed, written to rep_NNN/.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub replicates: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Panel CSV: node ids, optional #type: row, one row per step.
    #[arg(long)]
    pub data: PathBuf,
    /// Grouping JSON {"groups": [[1, 2], [3]]}; universal when omitted.
    #[arg(long, conflicts_with = "group_by_type")]
    pub seg: Option<PathBuf>,
    /// Group nodes by the panel's #type: row.
    #[arg(long)]
    pub group_by_type: bool,
    /// Lag order; 10 for fit and forecast, 14 for backtest when omitted.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub lags: Option<u64>,
    /// Engine settings JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Row index (0-based) of the first forecast target.
    #[arg(long)]
    pub split_index: usize,
    /// Repeat the full fit every N steps; 0 selects once.
    #[arg(long, default_value_t = 0)]
    pub refit_every: usize,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Ols)]
    pub estimator: EstimatorArg,
    #[arg(long, value_enum, default_value_t = NrmseArg::Typeset)]
    pub nrmse_form: NrmseArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub instances: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for verify.json and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    #[arg(long, requires = "selected")]
    pub truth: Option<PathBuf>,
    #[arg(long, requires = "truth")]
    pub selected: Option<PathBuf>,
    /// backtest.csv from the backtest command.
    #[arg(long)]
    pub backtest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = NrmseArg::Typeset)]
    pub nrmse_form: NrmseArg,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CovArg {
    Identity,
    Toeplitz,
}

impl From<CovArg> for CovKind {
    fn from(c: CovArg) -> Self {
        match c {
            CovArg::Identity => CovKind::Identity,
            CovArg::Toeplitz => CovKind::Toeplitz04,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Ols,
    Gls,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Ols => Estimator::Ols,
            EstimatorArg::Gls => Estimator::Gls,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NrmseArg {
    /// Mean squared error over the mean actual value.
    Typeset,
    /// Root mean squared error over the mean actual value.
    RootOverMean,
}

impl From<NrmseArg> for NrmseForm {
    fn from(n: NrmseArg) -> Self {
        match n {
            NrmseArg::Typeset => NrmseForm::AsTypeset,
            NrmseArg::RootOverMean => NrmseForm::RootOverMean,
        }
    }
}
