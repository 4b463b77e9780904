use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PriorError;

/// Analytic trend families of the prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrendKind {
    None,
    Linear,
    Log,
    Log1p,
    Quadratic,
    Exponential,
}

impl TrendKind {
    /// Fixed order used when drawing a kind from the cumulative table.
    pub const ALL: [TrendKind; 6] = [
        TrendKind::None,
        TrendKind::Linear,
        TrendKind::Log,
        TrendKind::Log1p,
        TrendKind::Quadratic,
        TrendKind::Exponential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrendKind::None => "none",
            TrendKind::Linear => "linear",
            TrendKind::Log => "log",
            TrendKind::Log1p => "log1p",
            TrendKind::Quadratic => "quadratic",
            TrendKind::Exponential => "exponential",
        }
    }
}

/// Functional form of the exponential trend at time `t` with sharpness `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentialForm {
    /// `exp(s·t) − 1`; close to `s` at `t = 1` for small `s`.
    #[default]
    ExpMinusOne,
    /// `exp(s·t)`.
    Exp,
}

/// Parameters of the synthetic prior. Integer ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub coeff_count_range: (usize, usize),
    pub coeff_range: (f64, f64),
    pub period_range: (usize, usize),
    pub train_periods_range: (usize, usize),
    /// Probability of each trend kind, including `None`.
    pub trend_probabilities: BTreeMap<TrendKind, f64>,
    /// Chance that a trended draw drops its seasonality entirely.
    pub pure_trend_probability: f64,
    /// Magnitude interval `(lo, hi)` per trend kind; the sharpness is drawn
    /// uniformly from `[-hi, -lo] ∪ [lo, hi]`.
    pub sharpness_ranges: BTreeMap<TrendKind, (f64, f64)>,
    pub exponential_form: ExponentialForm,
    pub clip_bounds: (f64, f64),
    pub target_length: usize,
    pub max_history: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        let trend_probabilities = BTreeMap::from([
            (TrendKind::None, 0.37),
            (TrendKind::Linear, 0.18),
            (TrendKind::Log, 0.18),
            (TrendKind::Log1p, 0.09),
            (TrendKind::Quadratic, 0.09),
            (TrendKind::Exponential, 0.09),
        ]);
        let sharpness_ranges = BTreeMap::from([
            (TrendKind::Linear, (0.0001, 0.01)),
            (TrendKind::Log, (0.01, 1.0)),
            (TrendKind::Log1p, (0.01, 1.0)),
            (TrendKind::Quadratic, (0.001, 0.01)),
            (TrendKind::Exponential, (0.0005, 0.005)),
        ]);
        Self {
            coeff_count_range: (3, 7),
            coeff_range: (-2.0, 2.0),
            period_range: (8, 199),
            train_periods_range: (2, 7),
            trend_probabilities,
            pure_trend_probability: 0.02,
            sharpness_ranges,
            exponential_form: ExponentialForm::ExpMinusOne,
            clip_bounds: (-1.0, 2.0),
            target_length: 720,
            max_history: 500,
        }
    }
}

impl PriorConfig {
    pub fn trend_probability(&self, kind: TrendKind) -> f64 {
        self.trend_probabilities.get(&kind).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        let bad = |msg: String| Err(PriorError::Config(msg));
        let total: f64 = self.trend_probabilities.values().sum();
        if self.trend_probabilities.values().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return bad(format!("trend probabilities must be non-negative and sum to 1, got {total}"));
        }
        for kind in TrendKind::ALL.iter().skip(1) {
            if self.trend_probability(*kind) > 0.0 {
                match self.sharpness_ranges.get(kind) {
                    Some(&(lo, hi)) if lo >= 0.0 && lo <= hi && hi.is_finite() => {}
                    other => return bad(format!("sharpness range for {} is {other:?}", kind.name())),
                }
            }
        }
        if !(0.0..=1.0).contains(&self.pure_trend_probability) {
            return bad(format!("pure_trend_probability {} outside [0, 1]", self.pure_trend_probability));
        }
        let (p_lo, p_hi) = self.period_range;
        if p_lo < 2 || p_lo > p_hi || p_hi >= self.max_history {
            return bad(format!("period range {:?} must lie in [2, {})", self.period_range, self.max_history));
        }
        let (c_lo, c_hi) = self.coeff_count_range;
        if c_lo < 1 || c_lo > c_hi || c_lo > p_lo / 2 {
            return bad(format!("coefficient count range {:?} must start in [1, {}]", self.coeff_count_range, p_lo / 2));
        }
        let (a, b) = self.coeff_range;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return bad(format!("coefficient range {:?}", self.coeff_range));
        }
        let (t_lo, t_hi) = self.train_periods_range;
        if t_lo < 1 || t_lo > t_hi {
            return bad(format!("train periods range {:?}", self.train_periods_range));
        }
        let (lo, hi) = self.clip_bounds;
        if !(lo < 0.0 && hi > 1.0) {
            return bad(format!("clip bounds {:?} must satisfy min < 0 < 1 < max", self.clip_bounds));
        }
        if self.target_length == 0 || self.max_history < 2 {
            return bad("target_length must be >= 1 and max_history >= 2".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        PriorConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let mut c = PriorConfig::default();
        c.trend_probabilities.insert(TrendKind::None, 0.5);
        assert!(c.validate().is_err());

        let mut c = PriorConfig::default();
        c.period_range = (8, 500);
        assert!(c.validate().is_err());

        let mut c = PriorConfig::default();
        c.coeff_count_range = (5, 7);
        c.period_range = (8, 100);
        assert!(c.validate().is_err());

        let mut c = PriorConfig::default();
        c.clip_bounds = (0.0, 2.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_serializes_with_readable_trend_names() {
        let text = serde_json::to_string(&PriorConfig::default()).unwrap();
        assert!(text.contains("\"log1p\""));
        let back: PriorConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, PriorConfig::default());
    }
}
