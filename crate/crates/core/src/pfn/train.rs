use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{masked_mse, DropoutCtx, PfnError, PfnModel};
use crate::engine::{adam_step, AdamState, Gradients, Graph, LrSchedule};
use crate::prior::{samples_at, PriorConfig, SyntheticSample};

/// Validation draws come from a separate stream so they never overlap the
/// training pool.
const VALIDATION_SALT: u64 = 0x9E37_79B9_7F4A_7C15;
const SHUFFLE_STREAM: u64 = 1 << 32;
const DROPOUT_STREAM: u64 = 2 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Size of the sample pool visited once per epoch.
    pub n_samples: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub seed: u64,
    /// Held-out draws scored before and after training.
    pub validation_samples: usize,
    /// Stop early after this many optimizer steps; the schedule still
    /// spans the full run.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_samples: 500_000,
            batch_size: 512,
            epochs: 400,
            base_lr: 0.003,
            seed: 0,
            validation_samples: 256,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self) -> u64 {
        self.n_samples.div_ceil(self.batch_size) as u64
    }

    pub fn schedule(&self) -> Result<LrSchedule, PfnError> {
        Ok(LrSchedule::half_epoch_warmup(self.base_lr, self.steps_per_epoch(), self.epochs as u64)?)
    }

    pub fn validate(&self) -> Result<(), PfnError> {
        if self.n_samples == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(PfnError::Config("n_samples, batch_size and epochs must be positive".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(PfnError::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: u64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    /// Loss of the first batch, before any update.
    pub initial_loss: f64,
    /// Mean batch loss over the last epoch run.
    pub final_loss: f64,
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub initial_validation_mse: f64,
    pub final_validation_mse: f64,
}

fn padded_target(s: &SyntheticSample, width: usize) -> (Vec<f64>, Vec<bool>) {
    let mut t = vec![0.0; width];
    let mut m = vec![false; width];
    for (i, (&v, &ok)) in s.target.iter().zip(&s.target_mask).take(width).enumerate() {
        t[i] = v;
        m[i] = ok;
    }
    (t, m)
}

/// Mean masked MSE of the model over `n` held-out draws.
pub fn validation_mse(model: &PfnModel, prior: &PriorConfig, seed: u64, n: usize) -> Result<f64, PfnError> {
    if n == 0 {
        return Ok(f64::NAN);
    }
    let idx: Vec<u64> = (0..n as u64).collect();
    let samples = samples_at(prior, seed ^ VALIDATION_SALT, &idx)?;
    let width = model.config().head_width;
    let losses: Result<Vec<f64>, PfnError> = samples
        .par_iter()
        .map(|s| {
            let pred = model.forward_row(&s.history, &s.history_mask)?;
            let (t, m) = padded_target(s, width);
            masked_mse(&pred, &t, &m)
        })
        .collect();
    let losses = losses?;
    Ok(losses.iter().sum::<f64>() / n as f64)
}

/// Per-draw model MSE against a last-value forecast on held-out samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutComparison {
    pub model_mse: Vec<f64>,
    pub last_value_mse: Vec<f64>,
    pub wins: usize,
}

impl HeldOutComparison {
    pub fn win_fraction(&self) -> f64 {
        self.wins as f64 / self.model_mse.len().max(1) as f64
    }
}

pub fn held_out_comparison(model: &PfnModel, prior: &PriorConfig, seed: u64, n: usize) -> Result<HeldOutComparison, PfnError> {
    let idx: Vec<u64> = (0..n as u64).collect();
    let samples = samples_at(prior, seed ^ VALIDATION_SALT, &idx)?;
    let width = model.config().head_width;
    let pairs: Result<Vec<(f64, f64)>, PfnError> = samples
        .par_iter()
        .map(|s| {
            let pred = model.forward_row(&s.history, &s.history_mask)?;
            let (t, m) = padded_target(s, width);
            let last = *s.history.last().expect("samples carry at least two history points");
            Ok((masked_mse(&pred, &t, &m)?, masked_mse(&vec![last; width], &t, &m)?))
        })
        .collect();
    let (model_mse, last_value_mse): (Vec<f64>, Vec<f64>) = pairs?.into_iter().unzip();
    let wins = model_mse.iter().zip(&last_value_mse).filter(|(a, b)| a < b).count();
    Ok(HeldOutComparison { model_mse, last_value_mse, wins })
}

/// Trains on a pool of `n_samples` prior draws (sample `i` is draw `i` of
/// the stream seeded by `tc.seed`), reshuffled every epoch. Each step
/// regenerates its batch, runs one graph per sample and applies Adam with
/// the warmup-cosine schedule.
pub fn train(model: &mut PfnModel, prior: &PriorConfig, tc: &TrainConfig) -> Result<TrainReport, PfnError> {
    tc.validate()?;
    prior.validate()?;
    if prior.max_history > model.config().max_history {
        return Err(PfnError::Config(format!(
            "prior histories reach {} points but the model holds {}",
            prior.max_history,
            model.config().max_history
        )));
    }
    let schedule = tc.schedule()?;
    let width = model.config().head_width;
    let dropout = model.config().dropout;
    let mut adam = AdamState::new(model.params());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    dropout_rng.set_stream(DROPOUT_STREAM);

    let initial_validation_mse = validation_mse(model, prior, tc.seed, tc.validation_samples)?;
    let mut step: u64 = 0;
    let limit = tc.max_steps.unwrap_or(u64::MAX).min(schedule.total_steps);
    let mut step_losses = Vec::new();
    let mut epoch_losses = Vec::new();
    let n_params = model.params().len();

    for epoch in 0..tc.epochs {
        let mut order: Vec<u64> = (0..tc.n_samples as u64).collect();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_sum = 0.0;
        let mut epoch_batches = 0usize;
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            if step >= limit {
                break;
            }
            let lr = schedule.lr_at(step)?;
            let diverged = |detail: String| PfnError::Diverged {
                step,
                lr,
                batch_seed: tc.seed,
                detail: format!("epoch {epoch}, batch {b}, first sample {}: {detail}", chunk[0]),
            };
            let samples = samples_at(prior, tc.seed, chunk)?;
            let targets: Vec<(Vec<f64>, Vec<bool>)> = samples.iter().map(|s| padded_target(s, width)).collect();
            let total: usize = targets.iter().map(|(_, m)| m.iter().filter(|&&v| v).count()).sum();
            if total == 0 {
                return Err(diverged("batch has no valid target slots".into()));
            }
            let mut grads = Gradients::empty(n_params);
            let mut batch_loss = 0.0;
            for (s, (t, m)) in samples.iter().zip(&targets) {
                let weight = m.iter().filter(|&&v| v).count() as f64 / total as f64;
                let mut g = Graph::new(model.params());
                let ctx = (dropout > 0.0).then(|| DropoutCtx { p: dropout, rng: &mut dropout_rng });
                let pred = model.forward_impl(&mut g, &s.history, &s.history_mask, ctx).map_err(|e| diverged(e.to_string()))?;
                let loss = g.masked_mse(pred, t, m).map_err(|e| diverged(e.to_string()))?;
                let weighted = g.scale(loss, weight).map_err(|e| diverged(e.to_string()))?;
                batch_loss += g.scalar(weighted)?;
                g.backward_into(weighted, &mut grads).map_err(|e| diverged(e.to_string()))?;
            }
            if !batch_loss.is_finite() {
                return Err(diverged(format!("loss {batch_loss}")));
            }
            let params = model.params_mut();
            params.zero_grad();
            params.accumulate(&grads)?;
            adam_step(params, &mut adam, lr).map_err(|e| diverged(e.to_string()))?;
            step_losses.push(batch_loss);
            epoch_sum += batch_loss;
            epoch_batches += 1;
            step += 1;
        }
        if epoch_batches == 0 {
            break;
        }
        let mean = epoch_sum / epoch_batches as f64;
        log::info!("epoch {} of {}: mean loss {mean:.5}, {step} steps", epoch + 1, tc.epochs);
        epoch_losses.push(mean);
    }
    let final_validation_mse = validation_mse(model, prior, tc.seed, tc.validation_samples)?;
    let initial_loss = step_losses.first().copied().unwrap_or(f64::NAN);
    let final_loss = epoch_losses.last().copied().unwrap_or(f64::NAN);
    Ok(TrainReport {
        steps: step,
        warmup_steps: schedule.warmup_steps,
        total_steps: schedule.total_steps,
        initial_loss,
        final_loss,
        step_losses,
        epoch_losses,
        initial_validation_mse,
        final_validation_mse,
    })
}

/// Desk-scale setup: 2 layers of width 32 trained on 20k prior draws for 5
/// epochs at batch 128. Prior histories are capped at the inference
/// look-back so training sees the context lengths used at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskPreset {
    pub model: super::PfnConfig,
    pub prior: PriorConfig,
    pub train: TrainConfig,
}

pub fn desk_preset(seed: u64) -> DeskPreset {
    DeskPreset {
        model: super::PfnConfig::small(2, 4, 32),
        prior: PriorConfig { max_history: super::DEFAULT_LOOK_BACK, ..PriorConfig::default() },
        train: TrainConfig { n_samples: 20_000, batch_size: 128, epochs: 5, base_lr: 0.003, seed, validation_samples: 200, max_steps: None },
    }
}
