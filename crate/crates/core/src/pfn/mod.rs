//! Encoder-only transformer forecaster trained on prior samples.
//!
//! Each history value becomes one token (a learned `1 → d_model`
//! projection), a CLS token is prepended, learnable positions are added and
//! the sequence runs through post-norm encoder layers. The CLS output goes
//! through LeakyReLU and a linear head that emits `head_width` future
//! values at once; shorter horizons read a prefix of the head.
//!
//! Positions are tied to lags: CLS sits at position 0 and the value `k`
//! steps before the forecast origin at `max_history - k`, so the most
//! recent observation always has the same embedding whatever the history
//! length. Padded slots are dropped before the encoder runs, which is
//! exactly equivalent to masking them out of every attention row and keeps
//! their contents from reaching any output.

mod checkpoint;
mod train;

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{EngineError, Graph, ParamId, ParamStore, Tensor, Var};
use crate::forecaster::{check_horizon, ForecastError, Forecaster};
use crate::prior::PriorError;
use crate::scalers::{FittedScaler, ScalerKind};

pub use checkpoint::{load, load_from, save, save_to, Checkpoint, TrainingMeta, CHECKPOINT_VERSION};
pub use train::{desk_preset, held_out_comparison, train, validation_mse, DeskPreset, HeldOutComparison, TrainConfig, TrainReport};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum PfnError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("context overflow: history width {len} exceeds max_history {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("horizon overflow: {requested} requested, head width is {max}")]
    HorizonOverflow { requested: usize, max: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("training diverged at step {step} (lr {lr:e}, batch seed {batch_seed}): {detail}")]
    Diverged { step: u64, lr: f64, batch_seed: u64, detail: String },
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfnConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub max_history: usize,
    pub head_width: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
}

impl Default for PfnConfig {
    fn default() -> Self {
        Self {
            n_layers: 5,
            n_heads: 4,
            d_model: 128,
            d_ffn: 512,
            max_history: 500,
            head_width: 720,
            leaky_slope: 0.01,
            dropout: 0.0,
        }
    }
}

impl PfnConfig {
    /// A smaller model with the default context and head; `d_ffn` is
    /// `4 · d_model`.
    pub fn small(n_layers: usize, n_heads: usize, d_model: usize) -> Self {
        Self { n_layers, n_heads, d_model, d_ffn: 4 * d_model, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), PfnError> {
        let bad = |m: String| Err(PfnError::Config(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ffn == 0 {
            return bad("layers, heads, d_model and d_ffn must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.n_heads));
        }
        if self.max_history == 0 || self.head_width == 0 {
            return bad("max_history and head_width must be positive".into());
        }
        if !(self.leaky_slope > 0.0) {
            return bad(format!("leaky_slope must be > 0, got {}", self.leaky_slope));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Parameter shapes in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f) = (self.d_model, self.d_ffn);
        let mut out = vec![
            ("input.w".to_string(), vec![1, d]),
            ("input.b".to_string(), vec![1, d]),
            ("cls".to_string(), vec![1, d]),
            ("pos".to_string(), vec![self.max_history + 1, d]),
        ];
        for l in 0..self.n_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            for proj in ["q", "k", "v", "o"] {
                out.push((p(&format!("w{proj}")), vec![d, d]));
                out.push((p(&format!("b{proj}")), vec![1, d]));
            }
            out.push((p("ln1.gamma"), vec![1, d]));
            out.push((p("ln1.beta"), vec![1, d]));
            out.push((p("ffn.w1"), vec![d, f]));
            out.push((p("ffn.b1"), vec![1, f]));
            out.push((p("ffn.w2"), vec![f, d]));
            out.push((p("ffn.b2"), vec![1, d]));
            out.push((p("ln2.gamma"), vec![1, d]));
            out.push((p("ln2.beta"), vec![1, d]));
        }
        out.push(("head.w".to_string(), vec![d, self.head_width]));
        out.push(("head.b".to_string(), vec![1, self.head_width]));
        out
    }
}

#[derive(Debug, Clone)]
struct LayerIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

#[derive(Debug, Clone)]
struct Layout {
    input_w: ParamId,
    input_b: ParamId,
    cls: ParamId,
    pos: ParamId,
    layers: Vec<LayerIds>,
    head_w: ParamId,
    head_b: ParamId,
}

impl Layout {
    fn resolve(config: &PfnConfig, params: &ParamStore) -> Result<Self, PfnError> {
        for (name, shape) in config.param_shapes() {
            match params.find(&name) {
                Some(id) if params.get(id).shape() == shape.as_slice() => {}
                Some(id) => {
                    return Err(PfnError::Format(format!(
                        "parameter {name} has shape {:?}, config implies {shape:?}",
                        params.get(id).shape()
                    )))
                }
                None => return Err(PfnError::Format(format!("missing parameter {name}"))),
            }
        }
        if params.len() != config.param_shapes().len() {
            return Err(PfnError::Format(format!("{} parameters stored, config implies {}", params.len(), config.param_shapes().len())));
        }
        let id = |n: &str| params.find(n).expect("checked above");
        let layers = (0..config.n_layers)
            .map(|l| {
                let p = |s: &str| id(&format!("layer{l}.{s}"));
                LayerIds {
                    wq: p("wq"),
                    bq: p("bq"),
                    wk: p("wk"),
                    bk: p("bk"),
                    wv: p("wv"),
                    bv: p("bv"),
                    wo: p("wo"),
                    bo: p("bo"),
                    ln1_g: p("ln1.gamma"),
                    ln1_b: p("ln1.beta"),
                    w1: p("ffn.w1"),
                    b1: p("ffn.b1"),
                    w2: p("ffn.w2"),
                    b2: p("ffn.b2"),
                    ln2_g: p("ln2.gamma"),
                    ln2_b: p("ln2.beta"),
                }
            })
            .collect();
        Ok(Self {
            input_w: id("input.w"),
            input_b: id("input.b"),
            cls: id("cls"),
            pos: id("pos"),
            layers,
            head_w: id("head.w"),
            head_b: id("head.b"),
        })
    }
}

/// Sinusoidal table: `pe[p, 2i] = sin(p / 10000^(2i/d))`,
/// `pe[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn sinusoidal_positions(rows: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * d];
    for p in 0..rows {
        for j in 0..d {
            let freq = 10000f64.powf((j - j % 2) as f64 / d as f64);
            let angle = p as f64 / freq;
            out[p * d + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

/// Default inference look-back.
pub const DEFAULT_LOOK_BACK: usize = 250;

#[derive(Debug, Clone)]
pub struct PfnModel {
    config: PfnConfig,
    params: ParamStore,
    layout: Layout,
    look_back: usize,
}

/// Dropout source used only while training.
pub(crate) struct DropoutCtx<'r, R: Rng> {
    pub p: f64,
    pub rng: &'r mut R,
}

impl PfnModel {
    /// Linear maps and their biases are uniform in `±1/sqrt(fan_in)`,
    /// layer norms start at identity, CLS at zero and positions at the
    /// sinusoidal table.
    pub fn init<R: Rng + ?Sized>(config: PfnConfig, rng: &mut R) -> Result<Self, PfnError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let (d, f) = (config.d_model, config.d_ffn);
        for (name, shape) in config.param_shapes() {
            let n: usize = shape.iter().product();
            let fan_in = if name.starts_with("input") {
                1
            } else if name.ends_with(".w2") || name.ends_with(".b2") {
                f
            } else {
                d
            };
            let data = if name == "cls" || name.ends_with(".beta") {
                vec![0.0; n]
            } else if name.ends_with(".gamma") {
                vec![1.0; n]
            } else if name == "pos" {
                sinusoidal_positions(config.max_history + 1, d)
            } else {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
            };
            params.add(name, Tensor::new(shape, data)?);
        }
        Self::from_params(config, params)
    }

    pub fn from_params(config: PfnConfig, params: ParamStore) -> Result<Self, PfnError> {
        config.validate()?;
        let layout = Layout::resolve(&config, &params)?;
        let look_back = DEFAULT_LOOK_BACK.min(config.max_history);
        Ok(Self { config, params, layout, look_back })
    }

    pub fn config(&self) -> &PfnConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn look_back(&self) -> usize {
        self.look_back
    }

    /// Sets the inference look-back, capped at `max_history`.
    pub fn with_look_back(mut self, look_back: usize) -> Result<Self, PfnError> {
        if look_back == 0 || look_back > self.config.max_history {
            return Err(PfnError::Config(format!("look_back {look_back} outside [1, {}]", self.config.max_history)));
        }
        self.look_back = look_back;
        Ok(self)
    }

    fn check_width(&self, width: usize) -> Result<(), PfnError> {
        if width > self.config.max_history {
            return Err(PfnError::ContextOverflow { len: width, max: self.config.max_history });
        }
        Ok(())
    }

    /// Records the forward pass for one history row of `values.len()` slots
    /// and returns the `1 × head_width` prediction node. Only `mask`-true
    /// slots become tokens.
    pub fn build_forward(&self, g: &mut Graph<'_>, values: &[f64], mask: &[bool]) -> Result<Var, PfnError> {
        self.forward_impl::<rand::rngs::mock::StepRng>(g, values, mask, None)
    }

    pub(crate) fn forward_impl<R: Rng>(
        &self,
        g: &mut Graph<'_>,
        values: &[f64],
        mask: &[bool],
        mut dropout: Option<DropoutCtx<'_, R>>,
    ) -> Result<Var, PfnError> {
        if values.len() != mask.len() {
            return Err(PfnError::Shape(format!("{} values with {} mask slots", values.len(), mask.len())));
        }
        let width = values.len();
        self.check_width(width)?;
        let c = &self.config;
        let lay = &self.layout;
        let max = c.max_history;

        let mut tokens = Vec::new();
        let mut positions = vec![0usize];
        for (j, (&v, &m)) in values.iter().zip(mask).enumerate() {
            if m {
                tokens.push(v);
                positions.push(max + 1 + j - width);
            }
        }
        let cls = g.param(lay.cls);
        let mut h = if tokens.is_empty() {
            cls
        } else {
            let n = tokens.len();
            let x = g.constant(n, 1, tokens)?;
            let w_in = g.param(lay.input_w);
            let b_in = g.param(lay.input_b);
            let emb = g.matmul(x, w_in)?;
            let emb = g.add_row(emb, b_in)?;
            g.concat_rows(&[cls, emb])?
        };
        let pos_table = g.param(lay.pos);
        let pos = g.gather_rows(pos_table, &positions)?;
        h = g.add(h, pos)?;

        let n_tok = positions.len();
        for (l, ids) in lay.layers.iter().enumerate() {
            // Only the CLS row feeds the head, so the last layer computes
            // its query alone.
            let q_src = if l + 1 == lay.layers.len() && n_tok > 1 { g.slice_rows(h, 0, 1)? } else { h };
            let proj = |g: &mut Graph<'_>, x: Var, w: ParamId, b: ParamId| -> Result<Var, EngineError> {
                let (w, b) = (g.param(w), g.param(b));
                let y = g.matmul(x, w)?;
                g.add_row(y, b)
            };
            let q = proj(g, q_src, ids.wq, ids.bq)?;
            let k = proj(g, h, ids.wk, ids.bk)?;
            let v = proj(g, h, ids.wv, ids.bv)?;
            let att = g.attention(q, k, v, c.n_heads, None)?;
            let mut att = proj(g, att, ids.wo, ids.bo)?;
            if let Some(ctx) = dropout.as_mut() {
                att = g.dropout(att, ctx.p, ctx.rng)?;
            }
            let r = g.add(q_src, att)?;
            let (g1, b1) = (g.param(ids.ln1_g), g.param(ids.ln1_b));
            let h1 = g.layer_norm(r, g1, b1, LN_EPS)?;
            let f = proj(g, h1, ids.w1, ids.b1)?;
            let f = g.leaky_relu(f, c.leaky_slope)?;
            let mut f = proj(g, f, ids.w2, ids.b2)?;
            if let Some(ctx) = dropout.as_mut() {
                f = g.dropout(f, ctx.p, ctx.rng)?;
            }
            let r = g.add(h1, f)?;
            let (g2, b2) = (g.param(ids.ln2_g), g.param(ids.ln2_b));
            h = g.layer_norm(r, g2, b2, LN_EPS)?;
        }
        let cls_out = if g.shape(h).0 > 1 { g.slice_rows(h, 0, 1)? } else { h };
        let act = g.leaky_relu(cls_out, c.leaky_slope)?;
        let (hw, hb) = (g.param(lay.head_w), g.param(lay.head_b));
        let out = g.matmul(act, hw)?;
        Ok(g.add_row(out, hb)?)
    }

    /// Head output for one (possibly padded) history row.
    pub fn forward_row(&self, values: &[f64], mask: &[bool]) -> Result<Vec<f64>, PfnError> {
        let mut g = Graph::new(&self.params);
        let out = self.build_forward(&mut g, values, mask)?;
        Ok(g.value(out).to_vec())
    }

    /// Batched forward over a row-major `batch × width` history matrix;
    /// returns `batch × head_width`. Rows run concurrently.
    pub fn forward(&self, history: &[f64], mask: &[bool], batch: usize) -> Result<Vec<f64>, PfnError> {
        if batch == 0 || history.len() % batch != 0 || mask.len() != history.len() {
            return Err(PfnError::Shape(format!(
                "history of {} values and mask of {} for batch {batch}",
                history.len(),
                mask.len()
            )));
        }
        let width = history.len() / batch;
        self.check_width(width)?;
        let rows: Result<Vec<Vec<f64>>, PfnError> = history
            .par_chunks(width.max(1))
            .zip(mask.par_chunks(width.max(1)))
            .map(|(v, m)| self.forward_row(v, m))
            .collect();
        Ok(rows?.concat())
    }

    /// Forecasts `horizon` raw-unit points: min-max fit on the last
    /// `look_back` points, clip to `[-1, 2]`, run the model, keep the first
    /// `horizon` head outputs and undo the scaling.
    pub fn predict(&self, history: &[f64], horizon: usize) -> Result<Vec<f64>, PfnError> {
        if horizon > self.config.head_width {
            return Err(PfnError::HorizonOverflow { requested: horizon, max: self.config.head_width });
        }
        if horizon == 0 {
            return Err(PfnError::Shape("horizon must be at least 1".into()));
        }
        if history.len() < 2 {
            return Err(PfnError::Shape(format!("history needs at least 2 points, got {}", history.len())));
        }
        let tail = &history[history.len() - history.len().min(self.look_back)..];
        let scaler = FittedScaler::fit(ScalerKind::MinMax, tail)
            .and_then(|s| s.with_clip(-1.0, 2.0))
            .map_err(|e| PfnError::Shape(e.to_string()))?;
        let scaled = scaler.transform(tail);
        let head = self.forward_row(&scaled, &vec![true; scaled.len()])?;
        Ok(scaler.inverse(&head[..horizon]))
    }
}

/// Masked mean squared error over `mask`-true slots.
pub fn masked_mse(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64, PfnError> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(PfnError::Shape(format!("prediction {}, target {}, mask {}", pred.len(), target.len(), mask.len())));
    }
    let mut sse = 0.0;
    let mut n = 0usize;
    for ((p, t), &m) in pred.iter().zip(target).zip(mask) {
        if m {
            sse += (p - t) * (p - t);
            n += 1;
        }
    }
    if n == 0 {
        return Err(PfnError::Engine(EngineError::Degenerate("no valid target slots".into())));
    }
    Ok(sse / n as f64)
}

/// A trained model exposed through the common forecaster interface.
#[derive(Clone)]
pub struct PfnForecaster {
    pub model: Arc<PfnModel>,
    pub name: String,
}

impl PfnForecaster {
    pub fn new(model: PfnModel) -> Self {
        Self { model: Arc::new(model), name: "pfn".into() }
    }
}

impl Forecaster for PfnForecaster {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn look_back(&self) -> usize {
        self.model.look_back()
    }

    fn max_horizon(&self) -> Option<usize> {
        Some(self.model.config.head_width)
    }

    fn forecast(&self, history: &[f64], horizon: usize) -> Result<Vec<f64>, ForecastError> {
        check_horizon(horizon, self.max_horizon())?;
        if history.len() < 2 {
            return Err(ForecastError::InsufficientData { needed: 2, available: history.len() });
        }
        self.model.predict(history, horizon).map_err(|e| match e {
            PfnError::HorizonOverflow { requested, max } => ForecastError::HorizonOverflow { requested, max },
            PfnError::ContextOverflow { len, max } => ForecastError::ContextOverflow { requested: len, max },
            other => ForecastError::Numeric(other.to_string()),
        })
    }
}
