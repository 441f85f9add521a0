//! Sparse network autoregression fitted by variational Bayes EM.
//!
//! The model is `Y_t = Y_{t-1} B_1 + ... + Y_{t-p} B_p + e_t` with row-vector
//! observations. Every coefficient matrix is split into an own-lag diagonal and
//! off-diagonal blocks gated by group indicators, with spike-and-slab priors on
//! both. The crate is `no_std` (with `alloc`); file formats and the command line
//! live in the companion `narvb` crate.
#![no_std]
#![deny(rust_2018_idioms)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod design;
pub mod error;
pub mod forecast;
mod math;
pub mod metrics;
pub mod oracle;
pub mod sim;
pub mod types;
pub mod vb;

pub use design::{column_views, demean, embed, DemeanedPanel, DesignMatrices};
pub use error::{Error, Result};
pub use forecast::{
    backtest, forecast_one, plugin_coefficients, select_structure, BacktestConfig,
    BacktestReport, Estimator,
};
pub use types::{
    CoefficientTensor, Dimensions, FitResult, GroupKind, HyperParams, IndicatorSet, NodeType,
    Segmentation, SupportMask, TimeSeriesPanel, VariationalState,
};
pub use vb::{fit, fit_fixed_hyperparams, Engine, EngineConfig, Fit};
