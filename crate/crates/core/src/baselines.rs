//! Supervised reference forecasters: last value, seasonal naive, a direct
//! linear map from look-back window to horizon, and a decomposition-linear
//! variant that feeds moving-average trend and remainder separately.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::forecaster::{check_horizon, ForecastError, ForecastMethod, Forecaster};

pub const DEFAULT_RIDGE: f64 = 1e-6;
pub const DEFAULT_KERNEL: usize = 25;

/// Below this squared ratio of smallest to largest Cholesky pivot the
/// normal equations are solved by SVD instead.
const PIVOT_RATIO_FLOOR: f64 = 1e-13;

pub fn last_value(history: &[f64], horizon: usize) -> Result<Vec<f64>, ForecastError> {
    match history.last() {
        Some(&v) => Ok(vec![v; horizon]),
        None => Err(ForecastError::InsufficientData { needed: 1, available: 0 }),
    }
}

/// `forecast[t] = history[len - P + (t mod P)]`; falls back to the last
/// value when the history is shorter than one period.
pub fn seasonal_naive(history: &[f64], period: usize, horizon: usize) -> Result<Vec<f64>, ForecastError> {
    if period == 0 {
        return Err(ForecastError::Argument("period must be at least 1".into()));
    }
    let n = history.len();
    if n < period {
        return last_value(history, horizon);
    }
    Ok((0..horizon).map(|t| history[n - period + t % period]).collect())
}

/// Centered moving average with edge-replicated padding.
pub fn moving_average(x: &[f64], kernel: usize) -> Vec<f64> {
    let half = kernel / 2;
    let n = x.len();
    (0..n)
        .map(|i| {
            let sum: f64 = (0..kernel).map(|j| x[(i + j).saturating_sub(half).min(n - 1)]).sum();
            sum / kernel as f64
        })
        .collect()
}

/// Splits a window into moving-average trend and remainder `x - trend`.
pub fn decompose(x: &[f64], kernel: usize) -> (Vec<f64>, Vec<f64>) {
    let trend = moving_average(x, kernel);
    let rem = x.iter().zip(&trend).map(|(a, b)| a - b).collect();
    (trend, rem)
}

/// Row-major stacks of every `(look_back, horizon)` window pair that lies
/// wholly inside one of the training series.
pub fn training_windows(train: &[&[f64]], look_back: usize, horizon: usize) -> (Vec<f64>, Vec<f64>, usize) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut n = 0;
    for s in train {
        if s.len() < look_back + horizon {
            continue;
        }
        for start in 0..=s.len() - look_back - horizon {
            x.extend_from_slice(&s[start..start + look_back]);
            y.extend_from_slice(&s[start + look_back..start + look_back + horizon]);
            n += 1;
        }
    }
    (x, y, n)
}

/// Ridge regression with an unpenalized intercept: returns the `p × h`
/// coefficient matrix (row-major) and the intercept per output.
pub fn ridge_fit(x: &[f64], y: &[f64], n: usize, p: usize, h: usize, ridge: f64) -> Result<(Vec<f64>, Vec<f64>), ForecastError> {
    if n == 0 {
        return Err(ForecastError::InsufficientData { needed: 1, available: 0 });
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(ForecastError::Argument(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    let xm = DMatrix::from_row_slice(n, p, x);
    let ym = DMatrix::from_row_slice(n, h, y);
    let x_mean = xm.row_mean();
    let y_mean = ym.row_mean();
    let mut xc = xm;
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let mut yc = ym;
    for mut row in yc.row_iter_mut() {
        row -= &y_mean;
    }
    let mut a = xc.tr_mul(&xc);
    for i in 0..p {
        a[(i, i)] += ridge;
    }
    let b = xc.tr_mul(&yc);
    let coef = solve_normal(a, &b)?;
    if coef.iter().any(|v| !v.is_finite()) {
        return Err(ForecastError::Numeric("non-finite ridge solution".into()));
    }
    let bias = (&y_mean - &x_mean * &coef).iter().copied().collect();
    let mut row_major = Vec::with_capacity(p * h);
    for i in 0..p {
        row_major.extend(coef.row(i).iter().copied());
    }
    Ok((row_major, bias))
}

fn solve_normal(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, ForecastError> {
    if let Some(chol) = a.clone().cholesky() {
        let diag = chol.l_dirty().diagonal();
        let max = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if max > 0.0 && (min / max).powi(2) > PIVOT_RATIO_FLOOR {
            return Ok(chol.solve(b));
        }
    }
    let svd = a.svd(true, true);
    let tol = svd.singular_values.max() * 1e-12;
    svd.solve(b, tol).map_err(|e| ForecastError::Numeric(format!("normal equations: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDirectModel {
    pub look_back: usize,
    pub horizon: usize,
    /// `horizon × look_back`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearDirectModel {
    /// Applies the map to exactly `look_back` inputs.
    pub fn apply(&self, window: &[f64]) -> Vec<f64> {
        debug_assert_eq!(window.len(), self.look_back);
        self.weights
            .chunks_exact(self.look_back)
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(window).map(|(a, x)| a * x).sum::<f64>())
            .collect()
    }

    fn from_coef(coef: &[f64], bias: Vec<f64>, look_back: usize, horizon: usize, row_offset: usize) -> Self {
        // coef is features × horizon; store transposed.
        let cols = horizon;
        let mut weights = vec![0.0; horizon * look_back];
        for j in 0..horizon {
            for i in 0..look_back {
                weights[j * look_back + i] = coef[(row_offset + i) * cols + j];
            }
        }
        Self { look_back, horizon, weights, bias }
    }
}

fn insufficient(train: &[&[f64]], look_back: usize, horizon: usize) -> ForecastError {
    ForecastError::InsufficientData {
        needed: look_back + horizon,
        available: train.iter().map(|s| s.len()).max().unwrap_or(0),
    }
}

pub fn fit_linear_direct(train: &[&[f64]], look_back: usize, horizon: usize, ridge: f64) -> Result<LinearDirectModel, ForecastError> {
    if look_back == 0 || horizon == 0 {
        return Err(ForecastError::Argument("look_back and horizon must be positive".into()));
    }
    let (x, y, n) = training_windows(train, look_back, horizon);
    if n == 0 {
        return Err(insufficient(train, look_back, horizon));
    }
    let (coef, bias) = ridge_fit(&x, &y, n, look_back, horizon, ridge)?;
    Ok(LinearDirectModel::from_coef(&coef, bias, look_back, horizon, 0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompLinearModel {
    pub kernel: usize,
    pub trend: LinearDirectModel,
    /// Carries a zero bias; the intercept lives in the trend branch.
    pub remainder: LinearDirectModel,
}

impl DecompLinearModel {
    pub fn apply(&self, window: &[f64]) -> Vec<f64> {
        let (t, r) = decompose(window, self.kernel);
        self.trend.apply(&t).iter().zip(self.remainder.apply(&r)).map(|(a, b)| a + b).collect()
    }
}

/// Fits both branches jointly by ridge regression on the concatenated
/// `[trend, remainder]` features.
pub fn fit_decomp_linear(train: &[&[f64]], look_back: usize, horizon: usize, kernel: usize, ridge: f64) -> Result<DecompLinearModel, ForecastError> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(ForecastError::Argument(format!("moving-average kernel must be odd, got {kernel}")));
    }
    if look_back == 0 || horizon == 0 {
        return Err(ForecastError::Argument("look_back and horizon must be positive".into()));
    }
    let (x, y, n) = training_windows(train, look_back, horizon);
    if n == 0 {
        return Err(insufficient(train, look_back, horizon));
    }
    let mut feats = Vec::with_capacity(n * 2 * look_back);
    for w in x.chunks_exact(look_back) {
        let (t, r) = decompose(w, kernel);
        feats.extend(t);
        feats.extend(r);
    }
    let (coef, bias) = ridge_fit(&feats, &y, n, 2 * look_back, horizon, ridge)?;
    Ok(DecompLinearModel {
        kernel,
        trend: LinearDirectModel::from_coef(&coef, bias, look_back, horizon, 0),
        remainder: LinearDirectModel::from_coef(&coef, vec![0.0; horizon], look_back, horizon, look_back),
    })
}

/// A fitted baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaselineModel {
    Last,
    Snaive { period: usize },
    Linear(LinearDirectModel),
    Dlinear(DecompLinearModel),
}

impl Forecaster for BaselineModel {
    fn id(&self) -> String {
        match self {
            BaselineModel::Last => "last".into(),
            BaselineModel::Snaive { .. } => "snaive".into(),
            BaselineModel::Linear(_) => "linear".into(),
            BaselineModel::Dlinear(_) => "dlinear".into(),
        }
    }

    fn look_back(&self) -> usize {
        match self {
            BaselineModel::Last => 1,
            BaselineModel::Snaive { period } => *period,
            BaselineModel::Linear(m) => m.look_back,
            BaselineModel::Dlinear(m) => m.trend.look_back,
        }
    }

    fn max_horizon(&self) -> Option<usize> {
        match self {
            BaselineModel::Last | BaselineModel::Snaive { .. } => None,
            BaselineModel::Linear(m) => Some(m.horizon),
            BaselineModel::Dlinear(m) => Some(m.trend.horizon),
        }
    }

    fn forecast(&self, history: &[f64], horizon: usize) -> Result<Vec<f64>, ForecastError> {
        check_horizon(horizon, self.max_horizon())?;
        let window = |l: usize| -> Result<&[f64], ForecastError> {
            if history.len() < l {
                return Err(ForecastError::InsufficientData { needed: l, available: history.len() });
            }
            Ok(&history[history.len() - l..])
        };
        let mut out = match self {
            BaselineModel::Last => return last_value(history, horizon),
            BaselineModel::Snaive { period } => return seasonal_naive(history, *period, horizon),
            BaselineModel::Linear(m) => m.apply(window(m.look_back)?),
            BaselineModel::Dlinear(m) => m.apply(window(m.trend.look_back)?),
        };
        out.truncate(horizon);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Last,
    Snaive,
    Linear,
    Dlinear,
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "last" => Ok(Self::Last),
            "snaive" => Ok(Self::Snaive),
            "linear" => Ok(Self::Linear),
            "dlinear" => Ok(Self::Dlinear),
            other => Err(format!("unknown baseline '{other}' (expected snaive, last, linear or dlinear)")),
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Last => "last",
            Self::Snaive => "snaive",
            Self::Linear => "linear",
            Self::Dlinear => "dlinear",
        })
    }
}

/// Hyperparameters of a baseline; fitting turns it into a [`BaselineModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    pub look_back: usize,
    /// Seasonal period for `snaive`.
    pub period: usize,
    pub kernel: usize,
    pub ridge: f64,
}

impl BaselineSpec {
    pub fn new(kind: BaselineKind, look_back: usize, period: usize) -> Self {
        Self { kind, look_back, period, kernel: DEFAULT_KERNEL, ridge: DEFAULT_RIDGE }
    }

    pub fn fit_model(&self, train: &[&[f64]], horizon: usize) -> Result<BaselineModel, ForecastError> {
        Ok(match self.kind {
            BaselineKind::Last => BaselineModel::Last,
            BaselineKind::Snaive => {
                if self.period == 0 {
                    return Err(ForecastError::Argument("seasonal naive needs a period".into()));
                }
                BaselineModel::Snaive { period: self.period }
            }
            BaselineKind::Linear => BaselineModel::Linear(fit_linear_direct(train, self.look_back, horizon, self.ridge)?),
            BaselineKind::Dlinear => {
                BaselineModel::Dlinear(fit_decomp_linear(train, self.look_back, horizon, self.kernel, self.ridge)?)
            }
        })
    }
}

impl ForecastMethod for BaselineSpec {
    fn id(&self) -> String {
        self.kind.to_string()
    }

    fn look_back(&self) -> usize {
        match self.kind {
            BaselineKind::Last => 1,
            BaselineKind::Snaive => self.period,
            _ => self.look_back,
        }
    }

    fn is_zero_shot(&self) -> bool {
        matches!(self.kind, BaselineKind::Last | BaselineKind::Snaive)
    }

    fn fit(&self, train: &[&[f64]], horizon: usize) -> Result<Arc<dyn Forecaster>, ForecastError> {
        Ok(Arc::new(self.fit_model(train, horizon)?))
    }
}
