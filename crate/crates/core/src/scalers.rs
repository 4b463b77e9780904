//! Affine scalers and source/target alignment.
//!
//! Every kind reduces to `y = (x - center) / scale`:
//!
//! | kind     | center | scale            |
//! |----------|--------|------------------|
//! | standard | mean   | population std   |
//! | minmax   | min    | max - min        |
//! | iqr      | median | Q3 - Q1          |
//!
//! A zero scale is replaced by 1 and the scaler is flagged degenerate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScalerError {
    #[error("scaler fit needs at least 2 points, got {0}")]
    TooShort(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("scaler kinds differ: target {target_kind}, source {source_kind}")]
    KindMismatch { target_kind: ScalerKind, source_kind: ScalerKind },
    #[error("invalid clip bounds ({0}, {1})")]
    Clip(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalerKind {
    Standard,
    MinMax,
    Iqr,
}

impl ScalerKind {
    pub const ALL: [ScalerKind; 3] = [ScalerKind::Standard, ScalerKind::MinMax, ScalerKind::Iqr];

    pub fn name(self) -> &'static str {
        match self {
            ScalerKind::Standard => "standard",
            ScalerKind::MinMax => "minmax",
            ScalerKind::Iqr => "iqr",
        }
    }
}

impl fmt::Display for ScalerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScalerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(ScalerKind::Standard),
            "minmax" => Ok(ScalerKind::MinMax),
            "iqr" | "quantile" | "robust" => Ok(ScalerKind::Iqr),
            other => Err(format!("unknown scaler kind '{other}' (expected standard, minmax or iqr)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedScaler {
    pub kind: ScalerKind,
    pub center: f64,
    pub scale: f64,
    /// The fitted spread was zero and `scale` was replaced by 1.
    pub degenerate: bool,
    pub clip: Option<(f64, f64)>,
}

/// Linearly interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl FittedScaler {
    pub fn fit(kind: ScalerKind, data: &[f64]) -> Result<Self, ScalerError> {
        if data.len() < 2 {
            return Err(ScalerError::TooShort(data.len()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ScalerError::NonFinite(i));
        }
        let n = data.len() as f64;
        let (center, spread) = match kind {
            ScalerKind::Standard => {
                let mean = data.iter().sum::<f64>() / n;
                let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                (mean, var.sqrt())
            }
            ScalerKind::MinMax => {
                let min = data.iter().copied().fold(f64::INFINITY, f64::min);
                let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (min, max - min)
            }
            ScalerKind::Iqr => {
                let mut sorted = data.to_vec();
                sorted.sort_by(f64::total_cmp);
                let q1 = quantile_sorted(&sorted, 0.25);
                let q3 = quantile_sorted(&sorted, 0.75);
                (quantile_sorted(&sorted, 0.5), q3 - q1)
            }
        };
        let degenerate = !(spread > 0.0);
        if degenerate {
            log::warn!("{kind} scaler fitted on data with zero spread; using unit scale");
        }
        Ok(Self { kind, center, scale: if degenerate { 1.0 } else { spread }, degenerate, clip: None })
    }

    pub fn with_clip(mut self, lo: f64, hi: f64) -> Result<Self, ScalerError> {
        if !(lo < hi) {
            return Err(ScalerError::Clip(lo, hi));
        }
        self.clip = Some((lo, hi));
        Ok(self)
    }

    pub fn transform_one(&self, x: f64) -> f64 {
        let y = (x - self.center) / self.scale;
        match self.clip {
            Some((lo, hi)) => y.clamp(lo, hi),
            None => y,
        }
    }

    pub fn inverse_one(&self, y: f64) -> f64 {
        y * self.scale + self.center
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.transform_one(v)).collect()
    }

    pub fn inverse(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|&v| self.inverse_one(v)).collect()
    }
}

fn same_kind(target: &FittedScaler, source: &FittedScaler) -> Result<(), ScalerError> {
    if target.kind != source.kind {
        return Err(ScalerError::KindMismatch { target_kind: target.kind, source_kind: source.kind });
    }
    Ok(())
}

/// Maps target-frame values into the source frame:
/// `source.inverse(target.transform(x))`.
pub fn align_target_to_source(target: &FittedScaler, source: &FittedScaler, x: &[f64]) -> Result<Vec<f64>, ScalerError> {
    same_kind(target, source)?;
    Ok(x.iter().map(|&v| source.inverse_one(target.transform_one(v))).collect())
}

/// Maps source-frame values back: `target.inverse(source.transform(y))`.
pub fn unalign(target: &FittedScaler, source: &FittedScaler, y: &[f64]) -> Result<Vec<f64>, ScalerError> {
    same_kind(target, source)?;
    Ok(y.iter().map(|&v| target.inverse_one(source.transform_one(v))).collect())
}
