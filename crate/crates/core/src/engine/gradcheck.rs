use super::graph::{Graph, Var};
use super::tensor::{Gradients, ParamId, ParamStore};
use super::EngineError;

pub const DENOM_FLOOR: f64 = 1e-6;

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences, coordinate by coordinate, over every parameter.
///
/// The per-coordinate error is `|a - c| / max(|a|, |c|, DENOM_FLOOR)`. The
/// floor sits above central-difference round-off (about `1e-16 / eps` for
/// an O(1) loss), so gradients that are zero or ~1e-8 are not scored on noise.
pub fn grad_check<F>(params: &ParamStore, eps: f64, f: F) -> Result<GradCheckReport, EngineError>
where
    F: Fn(&mut Graph<'_>) -> Result<Var, EngineError>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    compare_gradients(params, eps, &f, &analytic)
}

/// Finite-difference half of [`grad_check`], against caller-supplied
/// analytic gradients.
pub fn compare_gradients<F>(params: &ParamStore, eps: f64, f: &F, analytic: &Gradients) -> Result<GradCheckReport, EngineError>
where
    F: Fn(&mut Graph<'_>) -> Result<Var, EngineError>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(EngineError::Argument(format!("eps must lie in (0, 1e-2], got {eps}")));
    }
    let eval = |store: &ParamStore| -> Result<f64, EngineError> {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        let v = g.scalar(loss)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EngineError::Numeric("non-finite loss during finite differences".into()))
        }
    };
    let mut work = params.clone();
    let mut report = GradCheckReport { max_relative_error: 0.0, worst: None, coordinates: 0 };
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        if !params.get(id).requires_grad() {
            continue;
        }
        let n = params.get(id).numel();
        for k in 0..n {
            let orig = params.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + eps;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - eps;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let exact = analytic.get(id).map_or(0.0, |g| g[k]);
            let err = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(DENOM_FLOOR);
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((params.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}
