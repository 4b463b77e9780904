//! Common interface between forecasting models and evaluation protocols.

use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForecastError {
    #[error("insufficient data: need {needed} points, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("horizon overflow: {requested} requested, model supports {max}")]
    HorizonOverflow { requested: usize, max: usize },
    #[error("context overflow: {requested} points exceed the maximum of {max}")]
    ContextOverflow { requested: usize, max: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

/// A ready-to-use univariate forecaster.
pub trait Forecaster: Send + Sync {
    fn id(&self) -> String;

    /// Number of trailing history points the model reads.
    fn look_back(&self) -> usize;

    /// Longest horizon the model can produce, if bounded.
    fn max_horizon(&self) -> Option<usize>;

    /// Forecasts `horizon` points after the end of `history`. Histories
    /// longer than [`Forecaster::look_back`] are truncated to their tail.
    fn forecast(&self, history: &[f64], horizon: usize) -> Result<Vec<f64>, ForecastError>;
}

/// Something that yields a [`Forecaster`] from training data. Zero-shot
/// methods ignore the data.
pub trait ForecastMethod: Send + Sync {
    fn id(&self) -> String;

    fn look_back(&self) -> usize;

    fn is_zero_shot(&self) -> bool;

    /// Fits on one or more training series (channels are independent
    /// univariate series) for forecasts of `horizon` points.
    fn fit(&self, train: &[&[f64]], horizon: usize) -> Result<Arc<dyn Forecaster>, ForecastError>;
}

/// Wraps an already-trained forecaster as a zero-shot method.
#[derive(Clone)]
pub struct Pretrained(pub Arc<dyn Forecaster>);

impl ForecastMethod for Pretrained {
    fn id(&self) -> String {
        self.0.id()
    }

    fn look_back(&self) -> usize {
        self.0.look_back()
    }

    fn is_zero_shot(&self) -> bool {
        true
    }

    fn fit(&self, _train: &[&[f64]], _horizon: usize) -> Result<Arc<dyn Forecaster>, ForecastError> {
        Ok(Arc::clone(&self.0))
    }
}

pub(crate) fn check_horizon(requested: usize, max: Option<usize>) -> Result<(), ForecastError> {
    if requested == 0 {
        return Err(ForecastError::Argument("horizon must be at least 1".into()));
    }
    match max {
        Some(max) if requested > max => Err(ForecastError::HorizonOverflow { requested, max }),
        _ => Ok(()),
    }
}
