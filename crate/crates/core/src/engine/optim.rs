use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::tensor::ParamStore;
use super::EngineError;

/// Bias-corrected Adam state, one moment pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed moments shaped like `params`, with beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn new(params: &ParamStore) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        Self { step: 0, first: zeros.clone(), second: zeros, beta1, beta2, eps }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments_finite(&self) -> bool {
        self.first.iter().chain(&self.second).flatten().all(|v| v.is_finite())
    }
}

/// Applies one Adam update using the gradients stored on `params`.
/// Fails without touching anything if any gradient is non-finite.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<(), EngineError> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(EngineError::Argument(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    if state.first.len() != params.len() {
        return Err(EngineError::Shape("optimizer state does not match parameter store".into()));
    }
    for (id, name, t) in params.iter() {
        if let Some(g) = t.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(EngineError::Numeric(format!("non-finite gradient in {name} ({})", id.index())));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((tensor, m), v) in params.tensors_mut().iter_mut().zip(&mut state.first).zip(&mut state.second) {
        let (data, grad) = tensor.parts_mut();
        let Some(grad) = grad else { continue };
        for (((w, &g), m), v) in data.iter_mut().zip(grad.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Linear warmup from zero followed by cosine decay to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_steps: u64, total_steps: u64) -> Result<Self, EngineError> {
        if !(base_lr >= 0.0) || !base_lr.is_finite() {
            return Err(EngineError::Argument(format!("base_lr must be finite and >= 0, got {base_lr}")));
        }
        if warmup_steps > total_steps {
            return Err(EngineError::Argument(format!(
                "warmup_steps {warmup_steps} exceeds total_steps {total_steps}"
            )));
        }
        Ok(Self { base_lr, warmup_steps, total_steps })
    }

    /// Warmup of half an epoch, rounded up.
    pub fn half_epoch_warmup(base_lr: f64, steps_per_epoch: u64, epochs: u64) -> Result<Self, EngineError> {
        Self::new(base_lr, steps_per_epoch.div_ceil(2), steps_per_epoch * epochs)
    }

    pub fn lr_at(&self, step: u64) -> Result<f64, EngineError> {
        if step > self.total_steps {
            return Err(EngineError::Argument(format!("step {step} beyond schedule of {} steps", self.total_steps)));
        }
        if step < self.warmup_steps {
            return Ok(self.base_lr * step as f64 / self.warmup_steps as f64);
        }
        let span = self.total_steps - self.warmup_steps;
        if span == 0 {
            return Ok(self.base_lr);
        }
        let progress = (step - self.warmup_steps) as f64 / span as f64;
        Ok(0.5 * self.base_lr * (1.0 + (PI * progress).cos()))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Graph, Tensor};
    use super::*;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(w).unwrap());
        s
    }

    fn set_grad_quadratic(store: &mut ParamStore, target: f64) {
        let grads = {
            let mut g = Graph::new(store);
            let w = g.param(store.ids().next().unwrap());
            let c = g.constant(1, 1, vec![target]).unwrap();
            let d = g.sub(w, c).unwrap();
            let sq = g.mul(d, d).unwrap();
            g.backward(sq).unwrap()
        };
        store.zero_grad();
        store.accumulate(&grads).unwrap();
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut store = scalar_store(1.5);
        let mut state = AdamState::new(&store);
        set_grad_quadratic(&mut store, 5.0);
        adam_step(&mut store, &mut state, 0.0).unwrap();
        assert_eq!(store.get(store.ids().next().unwrap()).data(), &[1.5]);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g| + eps).
        let mut store = scalar_store(0.0);
        let id = store.ids().next().unwrap();
        store.get_mut(id).data_mut()[0] = 0.0;
        let mut g = crate::engine::Gradients::empty(1);
        g.add_to(id, &[1.0]);
        store.accumulate(&g).unwrap();
        let mut state = AdamState::new(&store);
        adam_step(&mut store, &mut state, 0.01).unwrap();
        let expected = -0.01 * 1.0 / (1.0 + 1e-8);
        assert!((store.get(id).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut store = scalar_store(0.0);
        let mut state = AdamState::new(&store);
        for _ in 0..100 {
            set_grad_quadratic(&mut store, 5.0);
            adam_step(&mut store, &mut state, 0.5).unwrap();
        }
        let w = store.get(store.ids().next().unwrap()).data()[0];
        assert!((w - 5.0).abs() < 0.5, "w = {w}");
        assert!(state.moments_finite());
    }

    #[test]
    fn nan_gradient_is_rejected_before_update() {
        let mut store = scalar_store(2.0);
        let id = store.ids().next().unwrap();
        let mut g = crate::engine::Gradients::empty(1);
        g.add_to(id, &[f64::NAN]);
        store.accumulate(&g).unwrap();
        let mut state = AdamState::new(&store);
        assert!(matches!(adam_step(&mut store, &mut state, 0.1), Err(EngineError::Numeric(_))));
        assert_eq!(state.step(), 0);
        assert_eq!(store.get(id).data(), &[2.0]);
    }

    #[test]
    fn schedule_endpoints() {
        let s = LrSchedule::new(0.003, 10, 100).unwrap();
        assert_eq!(s.lr_at(0).unwrap(), 0.0);
        assert_eq!(s.lr_at(10).unwrap(), 0.003);
        assert!(s.lr_at(100).unwrap().abs() < 1e-18);
        assert!(s.lr_at(101).is_err());
        assert!(LrSchedule::new(0.1, 11, 10).is_err());
    }

    #[test]
    fn half_epoch_warmup_rounds_up() {
        let s = LrSchedule::half_epoch_warmup(0.003, 157, 5).unwrap();
        assert_eq!(s.warmup_steps, 79);
        assert_eq!(s.total_steps, 785);
    }
}
