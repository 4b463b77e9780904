//! Synthetic-prior forecasting laboratory.
//!
//! The crate samples series from a Fourier-seasonality-plus-trend prior,
//! trains an encoder-only transformer forecaster on those samples, and
//! evaluates it next to simple supervised baselines under long-term,
//! few-shot and zero-shot transfer protocols.

pub mod baselines;
pub mod datasets;
pub mod engine;
pub mod eval;
pub mod forecaster;
pub mod pfn;
pub mod prior;
pub mod reporting;
pub mod scalers;

pub use forecaster::{ForecastError, ForecastMethod, Forecaster, Pretrained};
