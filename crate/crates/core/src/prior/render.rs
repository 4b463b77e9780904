use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::config::{ExponentialForm, TrendKind};
use super::PriorError;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// One period of seasonality: the coefficients fill frequency bins
/// `1..=N` of a length-`period` spectrum (DC stays zero), the spectrum is
/// inverted with `1/period` normalization, and the real part is tiled out to
/// `total_length` points.
pub fn render_seasonal(coefficients: &[Complex64], period: usize, total_length: usize) -> Result<Vec<f64>, PriorError> {
    if period == 0 || total_length == 0 {
        return Err(PriorError::Shape(format!("period {period} and length {total_length} must be positive")));
    }
    if coefficients.len() > period / 2 {
        return Err(PriorError::Aliasing { coefficients: coefficients.len(), period });
    }
    let mut spectrum = vec![Complex64::new(0.0, 0.0); period];
    spectrum[1..=coefficients.len()].copy_from_slice(coefficients);
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(period).process(&mut spectrum));
    let norm = 1.0 / period as f64;
    let wave: Vec<f64> = spectrum.iter().map(|c| c.re * norm).collect();
    Ok((0..total_length).map(|t| wave[t % period]).collect())
}

/// `sharpness · g(t)` for `t = 1..=length`.
pub fn render_trend(kind: TrendKind, sharpness: f64, length: usize, exp_form: ExponentialForm) -> Vec<f64> {
    (1..=length)
        .map(|t| {
            let t = t as f64;
            match kind {
                TrendKind::None => 0.0,
                TrendKind::Linear => sharpness * t,
                TrendKind::Log => sharpness * t.ln(),
                TrendKind::Log1p => sharpness * t.ln_1p(),
                TrendKind::Quadratic => sharpness * t * t,
                TrendKind::Exponential => match exp_form {
                    ExponentialForm::ExpMinusOne => (sharpness * t).exp_m1(),
                    ExponentialForm::Exp => (sharpness * t).exp(),
                },
            }
        })
        .collect()
}

/// Seasonal plus trend, or the bare trend for pure-trend draws.
pub fn compose(seasonal: &[f64], trend: &[f64], pure_trend: bool) -> Result<Vec<f64>, PriorError> {
    if seasonal.len() != trend.len() {
        return Err(PriorError::Shape(format!("seasonal length {} vs trend length {}", seasonal.len(), trend.len())));
    }
    if pure_trend {
        return Ok(trend.to_vec());
    }
    Ok(seasonal.iter().zip(trend).map(|(s, t)| s + t).collect())
}
