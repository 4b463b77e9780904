//! The synthetic prior: Fourier seasonality plus an analytic trend, split
//! into a history and a target, min-max scaled on the history and clipped.
//!
//! Sampling is driven by a ChaCha stream per sample: sample `i` of seed `s`
//! always comes from stream `i` of `ChaCha8Rng::seed_from_u64(s)`, so any
//! subset of a corpus can be regenerated, in any order or in parallel,
//! with identical results.

mod config;
mod io;
mod render;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

pub use config::{ExponentialForm, PriorConfig, TrendKind};
pub use io::{read_binary, read_csv, write_binary, write_csv, SampleRecord};
pub use render::{compose, render_seasonal, render_trend};

/// Draws rejected as degenerate before a sample gives up.
const MAX_RESAMPLE: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum PriorError {
    #[error("invalid prior config: {0}")]
    Config(String),
    #[error("{coefficients} coefficients alias in a period of {period}")]
    Aliasing { coefficients: usize, period: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One draw from the prior, before rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSpec {
    pub coefficients: Vec<Complex64>,
    pub period: usize,
    pub trend_kind: TrendKind,
    pub sharpness: f64,
    pub pure_trend: bool,
    pub train_start: usize,
    pub n_train_periods: usize,
    /// `train_start + n_train_periods · period + r` with `r < period`.
    pub train_end: usize,
}

impl SeriesSpec {
    /// Rendered length: the train part plus a full target.
    pub fn total_length(&self, config: &PriorConfig) -> usize {
        self.train_end + config.target_length
    }
}

/// A rendered, scaled and clipped sample. Masks are all-true for a single
/// sample; padding only happens in [`SyntheticBatch`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub spec: SeriesSpec,
    pub history: Vec<f64>,
    pub target: Vec<f64>,
    pub scale_min: f64,
    pub scale_max: f64,
    pub history_mask: Vec<bool>,
    pub target_mask: Vec<bool>,
}

pub fn sample_spec<R: Rng + ?Sized>(config: &PriorConfig, rng: &mut R) -> Result<SeriesSpec, PriorError> {
    config.validate()?;
    Ok(draw_spec(config, rng))
}

fn draw_spec<R: Rng + ?Sized>(config: &PriorConfig, rng: &mut R) -> SeriesSpec {
    let drawn_count = rng.gen_range(config.coeff_count_range.0..=config.coeff_count_range.1);
    let period = rng.gen_range(config.period_range.0..=config.period_range.1);
    // Short periods cannot hold every drawn coefficient below Nyquist.
    let n_coeffs = drawn_count.min(period / 2);
    let (lo, hi) = config.coeff_range;
    let coefficients = (0..n_coeffs)
        .map(|_| Complex64::new(rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)))
        .collect();

    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut trend_kind = TrendKind::None;
    for kind in TrendKind::ALL {
        let p = config.trend_probability(kind);
        if p == 0.0 {
            continue;
        }
        trend_kind = kind;
        acc += p;
        if u < acc {
            break;
        }
    }
    let sign_negative: bool = rng.gen();
    let sharpness = match (trend_kind, config.sharpness_ranges.get(&trend_kind)) {
        (TrendKind::None, _) | (_, None) => 0.0,
        (_, Some(&(s_lo, s_hi))) => {
            let mag = rng.gen_range(s_lo..=s_hi);
            if sign_negative {
                -mag
            } else {
                mag
            }
        }
    };
    let pure_draw: f64 = rng.gen();
    let pure_trend = trend_kind != TrendKind::None && pure_draw < config.pure_trend_probability;

    let train_start = rng.gen_range(0..period);
    let n_train_periods = rng.gen_range(config.train_periods_range.0..=config.train_periods_range.1);
    let remainder = rng.gen_range(0..period);
    let train_end = train_start + n_train_periods * period + remainder;
    SeriesSpec { coefficients, period, trend_kind, sharpness, pure_trend, train_start, n_train_periods, train_end }
}

/// Renders the full unscaled series for `spec`.
pub fn render(spec: &SeriesSpec, config: &PriorConfig) -> Result<Vec<f64>, PriorError> {
    let len = spec.total_length(config);
    let seasonal = render_seasonal(&spec.coefficients, spec.period, len)?;
    let trend = render_trend(spec.trend_kind, spec.sharpness, len, config.exponential_form);
    compose(&seasonal, &trend, spec.pure_trend)
}

/// Cuts the history (the most recent `max_history` points of the train
/// part) and the following target, min-max scales both with the history's
/// range and clips into `clip_bounds`.
pub fn split_scale_clip(raw: &[f64], spec: &SeriesSpec, config: &PriorConfig) -> Result<SyntheticSample, PriorError> {
    if raw.len() < spec.train_end + 1 {
        return Err(PriorError::Shape(format!(
            "raw series of {} points cannot hold a train part ending at {}",
            raw.len(),
            spec.train_end
        )));
    }
    let hist_start = spec.train_start.max(spec.train_end.saturating_sub(config.max_history));
    let hist_raw = &raw[hist_start..spec.train_end];
    if hist_raw.len() < 2 {
        return Err(PriorError::Degenerate(format!("train part of {} points", hist_raw.len())));
    }
    let min = hist_raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = hist_raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(min.is_finite() && max.is_finite() && max > min) {
        return Err(PriorError::Degenerate(format!("train part range [{min}, {max}]")));
    }
    let target_end = (spec.train_end + config.target_length).min(raw.len());
    let target_raw = &raw[spec.train_end..target_end];
    if target_raw.iter().any(|v| !v.is_finite()) {
        return Err(PriorError::Degenerate("non-finite target value".into()));
    }
    let (lo, hi) = config.clip_bounds;
    let range = max - min;
    let scale = |v: &f64| ((v - min) / range).clamp(lo, hi);
    let history: Vec<f64> = hist_raw.iter().map(scale).collect();
    let target: Vec<f64> = target_raw.iter().map(scale).collect();
    Ok(SyntheticSample {
        spec: spec.clone(),
        history_mask: vec![true; history.len()],
        target_mask: vec![true; target.len()],
        history,
        target,
        scale_min: min,
        scale_max: max,
    })
}

/// Deterministic sample `index` of the stream identified by `seed`,
/// redrawing on degenerate specs.
pub fn sample_at(config: &PriorConfig, seed: u64, index: u64) -> Result<SyntheticSample, PriorError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    for _ in 0..MAX_RESAMPLE {
        let spec = draw_spec(config, &mut rng);
        let raw = render(&spec, config)?;
        match split_scale_clip(&raw, &spec, config) {
            Ok(s) => return Ok(s),
            Err(PriorError::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(PriorError::Config(format!("{MAX_RESAMPLE} consecutive degenerate draws; the config cannot produce usable samples")))
}

/// A zero-padded batch: histories are padded on the left (oldest side),
/// targets on the right. All matrices are row-major `n × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub n: usize,
    pub history_width: usize,
    pub target_width: usize,
    pub history: Vec<f64>,
    pub history_mask: Vec<bool>,
    pub target: Vec<f64>,
    pub target_mask: Vec<bool>,
    pub scale_min: Vec<f64>,
    pub scale_max: Vec<f64>,
}

impl SyntheticBatch {
    pub fn from_samples(samples: &[SyntheticSample]) -> Self {
        let n = samples.len();
        let hw = samples.iter().map(|s| s.history.len()).max().unwrap_or(0);
        let tw = samples.iter().map(|s| s.target.len()).max().unwrap_or(0);
        let mut b = SyntheticBatch {
            n,
            history_width: hw,
            target_width: tw,
            history: vec![0.0; n * hw],
            history_mask: vec![false; n * hw],
            target: vec![0.0; n * tw],
            target_mask: vec![false; n * tw],
            scale_min: samples.iter().map(|s| s.scale_min).collect(),
            scale_max: samples.iter().map(|s| s.scale_max).collect(),
        };
        for (i, s) in samples.iter().enumerate() {
            let pad = hw - s.history.len();
            b.history[i * hw + pad..(i + 1) * hw].copy_from_slice(&s.history);
            b.history_mask[i * hw + pad..(i + 1) * hw].iter_mut().for_each(|m| *m = true);
            b.target[i * tw..i * tw + s.target.len()].copy_from_slice(&s.target);
            b.target_mask[i * tw..i * tw + s.target.len()].iter_mut().for_each(|m| *m = true);
        }
        b
    }

    pub fn history_row(&self, i: usize) -> (&[f64], &[bool]) {
        let w = self.history_width;
        (&self.history[i * w..(i + 1) * w], &self.history_mask[i * w..(i + 1) * w])
    }

    pub fn target_row(&self, i: usize) -> (&[f64], &[bool]) {
        let w = self.target_width;
        (&self.target[i * w..(i + 1) * w], &self.target_mask[i * w..(i + 1) * w])
    }
}

/// Renders samples `indices` of stream `seed`. Order of the output
/// follows `indices`; rendering runs in parallel.
pub fn samples_at(config: &PriorConfig, seed: u64, indices: &[u64]) -> Result<Vec<SyntheticSample>, PriorError> {
    config.validate()?;
    indices.par_iter().map(|&i| sample_at(config, seed, i)).collect()
}

/// `n` fresh samples; the stream seed is drawn from `rng`.
pub fn generate_batch<R: Rng + ?Sized>(n: usize, config: &PriorConfig, rng: &mut R) -> Result<SyntheticBatch, PriorError> {
    if n == 0 {
        return Err(PriorError::Shape("batch size must be at least 1".into()));
    }
    let seed: u64 = rng.gen();
    let indices: Vec<u64> = (0..n as u64).collect();
    Ok(SyntheticBatch::from_samples(&samples_at(config, seed, &indices)?))
}
