//! Metrics and evaluation protocols: long-term sliding windows, single-shot
//! validation, few-shot budget sweeps and zero-shot transfer with scaler
//! alignment.
//!
//! Protocols never fail on a model that cannot serve a request; they emit a
//! record with a non-`ok` status and no value instead.

use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{
    fewshot_slice, split, standardize, window_starts, AccessPhase, AccessTracker, BudgetPlan, DatasetError, DatasetMeta, SeriesStore,
};
use crate::forecaster::{ForecastError, ForecastMethod, Forecaster};
use crate::scalers::{FittedScaler, ScalerError, ScalerKind};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Scaler(#[from] ScalerError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error("record io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mse,
    Mae,
    Smape,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Mse, Metric::Mae, Metric::Smape];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Mae => "mae",
            Metric::Smape => "smape",
        }
    }

    pub fn compute(self, pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
        match self {
            Metric::Mse => mse(pred, truth),
            Metric::Mae => mae(pred, truth),
            Metric::Smape => smape(pred, truth),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Metric::Mse),
            "mae" => Ok(Metric::Mae),
            "smape" => Ok(Metric::Smape),
            other => Err(format!("unknown metric '{other}' (expected mse, mae or smape)")),
        }
    }
}

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<(), EvalError> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(EvalError::Shape(format!("prediction has {} points, truth {}", pred.len(), truth.len())));
    }
    Ok(())
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    check_lengths(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    check_lengths(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Symmetric MAPE in percent; terms with `|p| + |t| == 0` count as 0.
pub fn smape(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    check_lengths(pred, truth)?;
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let d = p.abs() + t.abs();
            if d == 0.0 {
                0.0
            } else {
                (p - t).abs() / d
            }
        })
        .sum();
    Ok(200.0 * sum / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    /// Too few training points for a supervised fit, or too short a history.
    InsufficientData,
    /// The model cannot produce the requested horizon.
    HorizonOverflow,
    Failed,
}

impl RecordStatus {
    fn from_error(e: &ForecastError) -> Self {
        match e {
            ForecastError::InsufficientData { .. } => RecordStatus::InsufficientData,
            ForecastError::HorizonOverflow { .. } => RecordStatus::HorizonOverflow,
            _ => RecordStatus::Failed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub model: String,
    pub source: String,
    pub target: String,
    pub horizon: usize,
    pub budget: Option<usize>,
    pub metric: Metric,
    pub value: Option<f64>,
    pub status: RecordStatus,
    /// Forecasts averaged into `value`.
    pub windows: usize,
    /// Series skipped as too short (single-shot protocol).
    pub skipped: usize,
}

impl EvalRecord {
    fn key(&self) -> (&str, &str, &str, usize, Option<usize>, Metric) {
        (&self.model, &self.source, &self.target, self.horizon, self.budget, self.metric)
    }
}

/// Sorts records into the canonical order used by every writer.
pub fn sort_records(records: &mut [EvalRecord]) {
    records.sort_by(|a, b| a.key().cmp(&b.key()));
}

pub fn write_records_csv<W: Write>(records: &[EvalRecord], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| EvalError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| EvalError::Io(e.to_string()))
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<EvalRecord>, EvalError> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize().enumerate().map(|(i, r)| r.map_err(|e| EvalError::Io(format!("record {}: {e}", i + 1)))).collect()
}

/// One JSON object per line.
pub fn write_records_jsonl<W: Write>(records: &[EvalRecord], mut out: W) -> Result<(), EvalError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| EvalError::Io(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| EvalError::Io(e.to_string()))?;
    }
    Ok(())
}

/// Frame in which errors are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    /// Standardized with statistics of the (possibly sliced) train segment.
    #[default]
    Standardized,
    Raw,
}

impl FromStr for Units {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standardized" => Ok(Units::Standardized),
            "raw" => Ok(Units::Raw),
            other => Err(format!("unknown units '{other}' (expected standardized or raw)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub metrics: Vec<Metric>,
    pub units: Units,
    pub stride: usize,
    /// Input window length; defaults to the method's look-back.
    pub look_back: Option<usize>,
    /// Source dataset label; defaults to the evaluated dataset.
    pub source: Option<String>,
    pub tracker: Option<Arc<AccessTracker>>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { metrics: Metric::ALL.to_vec(), units: Units::Standardized, stride: 1, look_back: None, source: None, tracker: None }
    }
}

impl EvalOptions {
    fn record(&self, channel: usize, phase: AccessPhase, range: Range<usize>) {
        if let Some(t) = &self.tracker {
            t.record(phase, channel, range);
        }
    }
}

struct Labels<'a> {
    model: String,
    source: String,
    target: &'a str,
    budget: Option<usize>,
}

fn records_for(labels: &Labels<'_>, horizon: usize, metrics: &[Metric], outcome: Result<(Vec<f64>, usize), RecordStatus>, skipped: usize) -> Vec<EvalRecord> {
    metrics
        .iter()
        .enumerate()
        .map(|(i, &metric)| {
            let (value, status, windows) = match &outcome {
                Ok((values, n)) => (Some(values[i]), RecordStatus::Ok, *n),
                Err(s) => (None, *s, 0),
            };
            EvalRecord {
                model: labels.model.clone(),
                source: labels.source.clone(),
                target: labels.target.to_string(),
                horizon,
                budget: labels.budget,
                metric,
                value,
                status,
                windows,
                skipped,
            }
        })
        .collect()
}

/// Mean of each metric over every `(channel, window)` forecast in `segment`.
/// `input_len` trailing points of each length-`look_back` window are fed to
/// the forecaster.
#[allow(clippy::too_many_arguments)]
fn score_segment(
    forecaster: &dyn Forecaster,
    channels: &[Vec<f64>],
    first_channel: usize,
    segment: Range<usize>,
    look_back: usize,
    input_len: usize,
    horizon: usize,
    opts: &EvalOptions,
) -> Result<(Vec<f64>, usize), RecordStatus> {
    let starts = window_starts(segment, look_back, horizon, opts.stride).map_err(|_| RecordStatus::InsufficientData)?;
    let jobs: Vec<(usize, usize)> = (0..channels.len()).flat_map(|c| starts.iter().map(move |&s| (c, s))).collect();
    let per_window: Result<Vec<Vec<f64>>, ForecastError> = jobs
        .par_iter()
        .map(|&(c, s)| {
            let input = s + look_back - input_len..s + look_back;
            let target = s + look_back..s + look_back + horizon;
            opts.record(first_channel + c, AccessPhase::Predict, input.clone());
            let pred = forecaster.forecast(&channels[c][input], horizon)?;
            if pred.len() != horizon || pred.iter().any(|v| !v.is_finite()) {
                return Err(ForecastError::Numeric(format!("{} returned an invalid forecast", forecaster.id())));
            }
            let truth = &channels[c][target];
            Ok(opts.metrics.iter().map(|m| m.compute(&pred, truth).expect("lengths checked")).collect())
        })
        .collect();
    let per_window = per_window.map_err(|e| {
        log::warn!("{}: {e}", forecaster.id());
        RecordStatus::from_error(&e)
    })?;
    let n = per_window.len();
    let means = (0..opts.metrics.len()).map(|i| per_window.iter().map(|w| w[i]).sum::<f64>() / n as f64).collect();
    Ok((means, n))
}

/// Channels in the evaluation frame together with the fit range.
fn frame(store: &SeriesStore, fit: Range<usize>, units: Units) -> Result<Vec<Vec<f64>>, EvalError> {
    Ok(match units {
        Units::Raw => store.channels.clone(),
        Units::Standardized => standardize(store, fit)?.store.channels,
    })
}

fn fit_method(
    method: &dyn ForecastMethod,
    channels: &[Vec<f64>],
    fit: Range<usize>,
    horizon: usize,
    opts: &EvalOptions,
) -> Result<Arc<dyn Forecaster>, ForecastError> {
    let train: Vec<&[f64]> = channels.iter().map(|c| &c[fit.clone()]).collect();
    if !method.is_zero_shot() {
        for c in 0..channels.len() {
            opts.record(c, AccessPhase::Fit, fit.clone());
        }
    }
    method.fit(&train, horizon)
}

/// Sliding-window evaluation on the test segment, one fit per horizon on
/// the full train segment.
pub fn evaluate_long_term(
    method: &dyn ForecastMethod,
    store: &SeriesStore,
    meta: &DatasetMeta,
    horizons: &[usize],
    opts: &EvalOptions,
) -> Result<Vec<EvalRecord>, EvalError> {
    let seg = split(store.len(), meta.ratios)?;
    let channels = frame(store, seg.train.clone(), opts.units)?;
    let look_back = opts.look_back.unwrap_or_else(|| method.look_back());
    let labels = Labels { model: method.id(), source: opts.source.clone().unwrap_or_else(|| meta.name.clone()), target: &meta.name, budget: None };
    let mut out = Vec::new();
    for &h in horizons {
        let outcome = fit_method(method, &channels, seg.train.clone(), h, opts)
            .map_err(|e| RecordStatus::from_error(&e))
            .and_then(|f| score_segment(f.as_ref(), &channels, 0, seg.test.clone(), look_back, look_back, h, opts));
        out.extend(records_for(&labels, h, &opts.metrics, outcome, 0));
    }
    Ok(out)
}

/// One forecast per series from everything before its final `horizon`
/// points. Supervised methods fit on those same histories. Series shorter
/// than `look_back + horizon` are skipped and counted.
pub fn evaluate_single_shot(
    method: &dyn ForecastMethod,
    dataset: &str,
    series: &[Vec<f64>],
    horizon: usize,
    opts: &EvalOptions,
) -> Result<Vec<EvalRecord>, EvalError> {
    if horizon == 0 {
        return Err(EvalError::Argument("horizon must be at least 1".into()));
    }
    let look_back = opts.look_back.unwrap_or_else(|| method.look_back());
    let usable: Vec<&Vec<f64>> = series.iter().filter(|s| s.len() >= look_back + horizon).collect();
    let skipped = series.len() - usable.len();
    let labels = Labels { model: method.id(), source: opts.source.clone().unwrap_or_else(|| dataset.to_string()), target: dataset, budget: None };
    if usable.is_empty() {
        return Ok(records_for(&labels, horizon, &opts.metrics, Err(RecordStatus::InsufficientData), skipped));
    }
    let histories: Vec<&[f64]> = usable.iter().map(|s| &s[..s.len() - horizon]).collect();
    let fitted = if method.is_zero_shot() { method.fit(&[], horizon) } else { method.fit(&histories, horizon) };
    let outcome = fitted.map_err(|e| RecordStatus::from_error(&e)).and_then(|f| {
        let per: Result<Vec<Vec<f64>>, ForecastError> = usable
            .par_iter()
            .zip(&histories)
            .map(|(s, hist)| {
                let pred = f.forecast(&hist[hist.len() - look_back..], horizon)?;
                let truth = &s[s.len() - horizon..];
                Ok(opts.metrics.iter().map(|m| m.compute(&pred, truth).expect("lengths checked")).collect())
            })
            .collect();
        let per = per.map_err(|e| RecordStatus::from_error(&e))?;
        let n = per.len();
        Ok(((0..opts.metrics.len()).map(|i| per.iter().map(|w| w[i]).sum::<f64>() / n as f64).collect(), n))
    });
    Ok(records_for(&labels, horizon, &opts.metrics, outcome, skipped))
}

/// Budget sweep: for each budget the train segment shrinks to its most
/// recent `B` points, standardization is refitted on that slice, supervised
/// methods are refitted, and the untouched test segment is scored.
/// Zero-shot methods see at most `B` points of each input window.
pub fn evaluate_fewshot(
    method: &dyn ForecastMethod,
    store: &SeriesStore,
    meta: &DatasetMeta,
    plan: &BudgetPlan,
    horizon: usize,
    opts: &EvalOptions,
) -> Result<Vec<EvalRecord>, EvalError> {
    let seg = split(store.len(), meta.ratios)?;
    let look_back = opts.look_back.unwrap_or_else(|| method.look_back());
    let mut out = Vec::new();
    for &b in &plan.budgets {
        let slice = fewshot_slice(seg.train.clone(), b);
        let labels = Labels { model: method.id(), source: opts.source.clone().unwrap_or_else(|| meta.name.clone()), target: &meta.name, budget: Some(b) };
        let channels = match frame(store, slice.clone(), opts.units) {
            Ok(c) => c,
            Err(EvalError::Dataset(DatasetError::InsufficientData { .. })) => {
                out.extend(records_for(&labels, horizon, &opts.metrics, Err(RecordStatus::InsufficientData), 0));
                continue;
            }
            Err(e) => return Err(e),
        };
        let input_len = if method.is_zero_shot() { look_back.min(b) } else { look_back };
        let outcome = fit_method(method, &channels, slice, horizon, opts)
            .map_err(|e| RecordStatus::from_error(&e))
            .and_then(|f| score_segment(f.as_ref(), &channels, 0, seg.test.clone(), look_back, input_len, horizon, opts));
        out.extend(records_for(&labels, horizon, &opts.metrics, outcome, 0));
    }
    Ok(out)
}

pub const TRANSFER_HORIZON: usize = 6;
/// Look-back presets for transfer runs.
pub const TRANSFER_LOOK_BACKS: [usize; 2] = [104, 148];

/// How target histories are mapped into the source frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alignment {
    /// Feed target values as they are.
    None,
    /// One target scaler per channel.
    #[default]
    PerSeries,
    /// One target scaler over all channels pooled.
    Pooled,
}

impl FromStr for Alignment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Alignment::None),
            "per-series" => Ok(Alignment::PerSeries),
            "pooled" => Ok(Alignment::Pooled),
            other => Err(format!("unknown alignment '{other}' (expected none, per-series or pooled)")),
        }
    }
}

/// A supervised model fitted on one dataset and applied to another.
#[derive(Clone)]
pub struct TransferJob {
    pub model: Arc<dyn Forecaster>,
    pub source: String,
    /// Scaler fitted on the pooled source train segment.
    pub source_scaler: FittedScaler,
    pub scaler_kind: ScalerKind,
    pub look_back: usize,
    pub horizon: usize,
    pub alignment: Alignment,
}

/// Fits a scaler of `kind` on every channel's train segment pooled.
pub fn pooled_train_scaler(store: &SeriesStore, train: Range<usize>, kind: ScalerKind) -> Result<FittedScaler, EvalError> {
    let pooled: Vec<f64> = store.channels.iter().flat_map(|c| c[train.clone()].iter().copied()).collect();
    Ok(FittedScaler::fit(kind, &pooled)?)
}

/// A forecaster that aligns its input into the source frame, forecasts and
/// maps the result back.
struct Aligned<'a> {
    inner: &'a dyn Forecaster,
    target: Option<FittedScaler>,
    source: FittedScaler,
}

impl Forecaster for Aligned<'_> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn look_back(&self) -> usize {
        self.inner.look_back()
    }

    fn max_horizon(&self) -> Option<usize> {
        self.inner.max_horizon()
    }

    fn forecast(&self, history: &[f64], horizon: usize) -> Result<Vec<f64>, ForecastError> {
        let Some(target) = &self.target else {
            return self.inner.forecast(history, horizon);
        };
        let to_err = |e: ScalerError| ForecastError::Numeric(e.to_string());
        let aligned = crate::scalers::align_target_to_source(target, &self.source, history).map_err(to_err)?;
        let pred = self.inner.forecast(&aligned, horizon)?;
        crate::scalers::unalign(target, &self.source, &pred).map_err(to_err)
    }
}

/// Scores a transferred model on the target's test windows. Errors are
/// measured in `opts.units` of the target.
pub fn evaluate_zero_shot_transfer(job: &TransferJob, store: &SeriesStore, meta: &DatasetMeta, opts: &EvalOptions) -> Result<Vec<EvalRecord>, EvalError> {
    if job.model.look_back() != job.look_back {
        return Err(EvalError::Argument(format!("job look-back {} does not match the model's {}", job.look_back, job.model.look_back())));
    }
    if job.source_scaler.kind != job.scaler_kind {
        return Err(EvalError::Argument(format!("source scaler is {}, job asks for {}", job.source_scaler.kind, job.scaler_kind)));
    }
    let seg = split(store.len(), meta.ratios)?;
    let pooled = pooled_train_scaler(store, seg.train.clone(), job.scaler_kind)?;
    let labels = Labels { model: job.model.id(), source: job.source.clone(), target: &meta.name, budget: None };
    // Each channel gets its own aligned forecaster, so score one channel at
    // a time and pool the windows.
    let mut sums = vec![0.0; opts.metrics.len()];
    let mut total = 0usize;
    let mut failure = None;
    for (c, raw) in store.channels.iter().enumerate() {
        let target = match job.alignment {
            Alignment::None => None,
            Alignment::Pooled => Some(pooled),
            Alignment::PerSeries => Some(FittedScaler::fit(job.scaler_kind, &raw[seg.train.clone()])?),
        };
        let aligned = Aligned { inner: job.model.as_ref(), target, source: job.source_scaler };
        let scored = match opts.units {
            Units::Raw => score_channel(&aligned, raw.clone(), c, &seg.test, job, opts),
            Units::Standardized => {
                let s = FittedScaler::fit(ScalerKind::Standard, &raw[seg.train.clone()])?;
                let view = StandardizedView { inner: &aligned, scaler: s };
                score_channel(&view, s.transform(raw), c, &seg.test, job, opts)
            }
        };
        match scored {
            Ok((means, n)) => {
                for (acc, m) in sums.iter_mut().zip(means) {
                    *acc += m * n as f64;
                }
                total += n;
            }
            Err(s) => {
                failure = Some(s);
                break;
            }
        }
    }
    let outcome = match failure {
        Some(s) => Err(s),
        None => Ok((sums.iter().map(|s| s / total as f64).collect(), total)),
    };
    Ok(records_for(&labels, job.horizon, &opts.metrics, outcome, 0))
}

fn score_channel(f: &dyn Forecaster, channel: Vec<f64>, c: usize, test: &Range<usize>, job: &TransferJob, opts: &EvalOptions) -> Result<(Vec<f64>, usize), RecordStatus> {
    score_segment(f, &[channel], c, test.clone(), job.look_back, job.look_back, job.horizon, opts)
}

/// Presents a raw-unit forecaster to standardized inputs and outputs.
struct StandardizedView<'a> {
    inner: &'a dyn Forecaster,
    scaler: FittedScaler,
}

impl Forecaster for StandardizedView<'_> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn look_back(&self) -> usize {
        self.inner.look_back()
    }

    fn max_horizon(&self) -> Option<usize> {
        self.inner.max_horizon()
    }

    fn forecast(&self, history: &[f64], horizon: usize) -> Result<Vec<f64>, ForecastError> {
        let raw = self.scaler.inverse(history);
        Ok(self.scaler.transform(&self.inner.forecast(&raw, horizon)?))
    }
}

/// Runs independent jobs in parallel and merges their records in the
/// canonical order, so the result does not depend on the thread count.
pub fn run_jobs<T, F>(jobs: &[T], f: F) -> Result<Vec<EvalRecord>, EvalError>
where
    T: Sync,
    F: Fn(&T) -> Result<Vec<EvalRecord>, EvalError> + Sync + Send,
{
    let parts: Result<Vec<Vec<EvalRecord>>, EvalError> = jobs.par_iter().map(f).collect();
    let mut all: Vec<EvalRecord> = parts?.into_iter().flatten().collect();
    sort_records(&mut all);
    Ok(all)
}
