//! Record-on-forward computation graph over 2-D values.
//!
//! Every node holds a `rows × cols` row-major buffer (tensors with more
//! axes are flattened onto their last axis). Parameter nodes borrow their
//! data from the [`ParamStore`], so building a graph never copies weights.

use rand::Rng;

use super::gemm::{gemm, gemm_block, Block, Operand};
use super::tensor::{Gradients, ParamId, ParamStore, Tensor};
use super::EngineError;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Vec<f64>),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: usize, b: usize },
    MatMulNt { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddRow { a: usize, row: usize },
    Scale { a: usize, factor: f64 },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    MaskedSoftmax { x: usize },
    Attention { q: usize, k: usize, v: usize, heads: usize, probs: Vec<f64> },
    LeakyRelu { x: usize, slope: f64 },
    SliceCols { a: usize, start: usize },
    ConcatCols { parts: Vec<usize> },
    SliceRows { a: usize, start: usize },
    ConcatRows { parts: Vec<usize> },
    GatherRows { table: usize, index: Vec<usize> },
    Sum { a: usize },
    MaskedMse { pred: usize, target: Vec<f64>, mask: Vec<bool>, count: usize },
    Dropout { x: usize, keep: Vec<f64> },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Value,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn check_finite(op: &str, data: &[f64]) -> Result<(), EngineError> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(EngineError::Numeric(format!("{op}: non-finite output at index {i}"))),
        None => Ok(()),
    }
}

fn slot<'a>(adj: &'a mut [Option<Vec<f64>>], idx: usize, len: usize) -> &'a mut Vec<f64> {
    adj[idx].get_or_insert_with(|| vec![0.0; len])
}

/// `exp(x)` for `x <= 0`, as used by softmax after max subtraction.
/// Range reduction `x = k·ln2 + r` with `|r| <= ln2/2`, a degree-13 Taylor
/// polynomial for `e^r` and exponent-bit scaling; relative error stays
/// below 1e-15 on `[-708, 0]`, and smaller inputs give 0. Branch-free so
/// that slices of it vectorize.
#[inline]
pub(crate) fn exp_nonpositive(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // 1.5·2^52: adding it rounds to an integer held in the low mantissa bits.
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let live = x >= -708.0;
    let x = x.max(-708.0);
    let t = x * std::f64::consts::LOG2_E + SHIFTER;
    let k = t - SHIFTER;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p: f64 = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    // Low bits of `t` hold k in two's complement; k + 1023 lies in [1, 1023].
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    if live {
        p * scale
    } else {
        0.0
    }
}

fn softmax_in_place(row: &mut [f64], mask: Option<&[bool]>) {
    let live = |j: usize| mask.is_none_or(|m| m[j]);
    let max = row.iter().enumerate().filter(|&(j, _)| live(j)).map(|(_, &v)| v).fold(f64::NEG_INFINITY, f64::max);
    for v in row.iter_mut() {
        *v = exp_nonpositive(*v - max);
    }
    if let Some(m) = mask {
        row.iter_mut().zip(m).filter(|(_, &keep)| !keep).for_each(|(v, _)| *v = 0.0);
    }
    let total: f64 = row.iter().sum();
    let inv = 1.0 / total;
    row.iter_mut().for_each(|v| *v *= inv);
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.val(v.0)
    }

    /// The single value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> Result<f64, EngineError> {
        match self.value(v) {
            [x] => Ok(*x),
            other => Err(EngineError::Shape(format!("expected scalar, got {} values", other.len()))),
        }
    }

    fn val(&self, i: usize) -> &[f64] {
        match &self.nodes[i].value {
            Value::Owned(v) => v,
            Value::Param(id) => self.params.get(*id).data(),
        }
    }

    fn dims(&self, i: usize) -> (usize, usize) {
        (self.nodes[i].rows, self.nodes[i].cols)
    }

    fn push(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>, op: Op, inputs: &[usize]) -> Result<Var, EngineError> {
        debug_assert_eq!(data.len(), rows * cols);
        check_finite(name, &data)?;
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node { rows, cols, value: Value::Owned(data), op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; never receives gradients.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var, EngineError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(EngineError::Shape(format!("constant {rows}x{cols} with {} values", data.len())));
        }
        self.push("constant", rows, cols, data, Op::Leaf, &[])
    }

    pub fn input(&mut self, t: &Tensor) -> Result<Var, EngineError> {
        self.constant(t.rows(), t.cols(), t.data().to_vec())
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let t = self.params.get(id);
        self.nodes.push(Node {
            rows: t.rows(),
            cols: t.cols(),
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let (m, k) = self.dims(a.0);
        let (k2, n) = self.dims(b.0);
        if k != k2 {
            return Err(EngineError::Shape(format!("matmul {m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(Operand::new(self.val(a.0), m, k), Operand::new(self.val(b.0), k, n), &mut out, 0.0);
        self.push("matmul", m, n, out, Op::MatMul { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let (m, k) = self.dims(a.0);
        let (n, k2) = self.dims(b.0);
        if k != k2 {
            return Err(EngineError::Shape(format!("matmul_nt {m}x{k} · ({n}x{k2})ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        gemm(Operand::new(self.val(a.0), m, k), Operand::new(self.val(b.0), n, k).t(), &mut out, 0.0);
        self.push("matmul_nt", m, n, out, Op::MatMulNt { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    fn zip_same(&mut self, name: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, EngineError> {
        let (ra, ca) = self.dims(a.0);
        if self.dims(b.0) != (ra, ca) {
            return Err(EngineError::Shape(format!("{name}: {:?} vs {:?}", self.dims(a.0), self.dims(b.0))));
        }
        let out = self.val(a.0).iter().zip(self.val(b.0)).map(|(&x, &y)| f(x, y)).collect();
        self.push(name, ra, ca, out, op, &[a.0, b.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub { a: a.0, b: b.0 })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul { a: a.0, b: b.0 })
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, EngineError> {
        let (r, c) = self.dims(a.0);
        if self.dims(row.0) != (1, c) {
            return Err(EngineError::Shape(format!("add_row: {r}x{c} + {:?}", self.dims(row.0))));
        }
        let bias = self.val(row.0);
        let out = self.val(a.0).chunks_exact(c).flat_map(|x| x.iter().zip(bias).map(|(u, v)| u + v)).collect();
        self.push("add_row", r, c, out, Op::AddRow { a: a.0, row: row.0 }, &[a.0, row.0])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, EngineError> {
        let (r, c) = self.dims(a.0);
        let out = self.val(a.0).iter().map(|x| x * factor).collect();
        self.push("scale", r, c, out, Op::Scale { a: a.0, factor }, &[a.0])
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gamma ⊙ x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, EngineError> {
        let (r, d) = self.dims(x.0);
        if self.dims(gamma.0) != (1, d) || self.dims(beta.0) != (1, d) {
            return Err(EngineError::Shape(format!(
                "layer_norm: input width {d}, gamma {:?}, beta {:?}",
                self.dims(gamma.0),
                self.dims(beta.0)
            )));
        }
        let g = self.val(gamma.0);
        let b = self.val(beta.0);
        let mut xhat = Vec::with_capacity(r * d);
        let mut rstd = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * d);
        for row in self.val(x.0).chunks_exact(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd.push(rs);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * rs;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        self.push("layer_norm", r, d, out, Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, rstd }, &[x.0, gamma.0, beta.0])
    }

    /// Row-wise softmax restricted to `mask`-true entries; masked entries
    /// come out exactly zero. `mask` is either full-size or one row that is
    /// broadcast to all rows.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var, EngineError> {
        let (r, c) = self.dims(x.0);
        let broadcast = match mask.len() {
            l if l == c => true,
            l if l == r * c => false,
            l => return Err(EngineError::Shape(format!("masked_softmax: mask of {l} for {r}x{c}"))),
        };
        let mut out = vec![0.0; r * c];
        for (i, (row, dst)) in self.val(x.0).chunks_exact(c).zip(out.chunks_exact_mut(c)).enumerate() {
            let m = if broadcast { mask } else { &mask[i * c..(i + 1) * c] };
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(EngineError::DegenerateRow(i));
            }
            let mut total = 0.0;
            for ((d, &v), &keep) in dst.iter_mut().zip(row).zip(m) {
                if keep {
                    *d = exp_nonpositive(v - max);
                    total += *d;
                }
            }
            let inv = 1.0 / total;
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        self.push("masked_softmax", r, c, out, Op::MaskedSoftmax { x: x.0 }, &[x.0])
    }

    /// Multi-head scaled dot-product attention in one node. Head `h` uses
    /// column block `[h·dh, (h+1)·dh)` of `q`, `k` and `v` (`dh = d / heads`)
    /// and writes the same block of the `m × d` output:
    /// `softmax(q_h · k_hᵀ / sqrt(dh)) · v_h`, with keys outside `key_mask`
    /// getting weight exactly 0. Matches the composition of `slice_cols`,
    /// `matmul_nt`, `scale`, `masked_softmax`, `matmul` and `concat_cols`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, key_mask: Option<&[bool]>) -> Result<Var, EngineError> {
        let (m, d) = self.dims(q.0);
        let (n, dk) = self.dims(k.0);
        let (nv, dv) = self.dims(v.0);
        if heads == 0 || d % heads != 0 || dk != d || dv != d || nv != n {
            return Err(EngineError::Shape(format!(
                "attention: q {m}x{d}, k {n}x{dk}, v {nv}x{dv} with {heads} heads"
            )));
        }
        if let Some(mask) = key_mask {
            if mask.len() != n {
                return Err(EngineError::Shape(format!("attention: key mask of {} for {n} keys", mask.len())));
            }
            if !mask.iter().any(|&b| b) {
                return Err(EngineError::DegenerateRow(0));
            }
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * m * n];
        let mut out = vec![0.0; m * d];
        let (qv, kv, vv) = (self.val(q.0), self.val(k.0), self.val(v.0));
        for (h, p) in probs.chunks_exact_mut(m * n).enumerate() {
            let c0 = h * dh;
            gemm_block(scale, Block::new(qv, d, c0, dh), Block::new(kv, d, c0, dh).t(), 0.0, p, n, 0);
            for row in p.chunks_exact_mut(n) {
                softmax_in_place(row, key_mask);
            }
            gemm_block(1.0, Block::new(p, n, 0, n), Block::new(vv, d, c0, dh), 0.0, &mut out, d, c0);
        }
        let op = Op::Attention { q: q.0, k: k.0, v: v.0, heads, probs };
        self.push("attention", m, d, out, op, &[q.0, k.0, v.0])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, EngineError> {
        if !(slope > 0.0) {
            return Err(EngineError::Argument(format!("leaky_relu slope must be > 0, got {slope}")));
        }
        let (r, c) = self.dims(x.0);
        let out = self.val(x.0).iter().map(|&v| if v >= 0.0 { v } else { slope * v }).collect();
        self.push("leaky_relu", r, c, out, Op::LeakyRelu { x: x.0, slope }, &[x.0])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, EngineError> {
        let (r, c) = self.dims(a.0);
        if len == 0 || start + len > c {
            return Err(EngineError::Shape(format!("slice_cols [{start}, {}) of width {c}", start + len)));
        }
        let out = self.val(a.0).chunks_exact(c).flat_map(|row| row[start..start + len].iter().copied()).collect();
        self.push("slice_cols", r, len, out, Op::SliceCols { a: a.0, start }, &[a.0])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, EngineError> {
        let Some(first) = parts.first() else {
            return Err(EngineError::Shape("concat_cols of nothing".into()));
        };
        let r = self.dims(first.0).0;
        if parts.iter().any(|p| self.dims(p.0).0 != r) {
            return Err(EngineError::Shape("concat_cols: row counts differ".into()));
        }
        let c: usize = parts.iter().map(|p| self.dims(p.0).1).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for p in parts {
                let pc = self.dims(p.0).1;
                out.extend_from_slice(&self.val(p.0)[i * pc..(i + 1) * pc]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push("concat_cols", r, c, out, Op::ConcatCols { parts: ids.clone() }, &ids)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, EngineError> {
        let (r, c) = self.dims(a.0);
        if len == 0 || start + len > r {
            return Err(EngineError::Shape(format!("slice_rows [{start}, {}) of {r}", start + len)));
        }
        let out = self.val(a.0)[start * c..(start + len) * c].to_vec();
        self.push("slice_rows", len, c, out, Op::SliceRows { a: a.0, start }, &[a.0])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, EngineError> {
        let Some(first) = parts.first() else {
            return Err(EngineError::Shape("concat_rows of nothing".into()));
        };
        let c = self.dims(first.0).1;
        if parts.iter().any(|p| self.dims(p.0).1 != c) {
            return Err(EngineError::Shape("concat_rows: widths differ".into()));
        }
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.val(p.0));
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push("concat_rows", out.len() / c, c, out, Op::ConcatRows { parts: ids.clone() }, &ids)
    }

    /// Row lookup: output row `i` is `table[index[i]]`.
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var, EngineError> {
        let (r, c) = self.dims(table.0);
        if index.is_empty() {
            return Err(EngineError::Shape("gather_rows with empty index".into()));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(EngineError::Shape(format!("gather_rows index {bad} out of {r} rows")));
        }
        let t = self.val(table.0);
        let out = index.iter().flat_map(|&i| t[i * c..(i + 1) * c].iter().copied()).collect();
        self.push("gather_rows", index.len(), c, out, Op::GatherRows { table: table.0, index: index.to_vec() }, &[table.0])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, EngineError> {
        let s = self.val(a.0).iter().sum();
        self.push("sum", 1, 1, vec![s], Op::Sum { a: a.0 }, &[a.0])
    }

    /// Mean squared error over `mask`-true slots.
    pub fn masked_mse(&mut self, pred: Var, target: &[f64], mask: &[bool]) -> Result<Var, EngineError> {
        let (r, c) = self.dims(pred.0);
        if target.len() != r * c || mask.len() != r * c {
            return Err(EngineError::Shape(format!(
                "masked_mse: prediction {r}x{c}, target {}, mask {}",
                target.len(),
                mask.len()
            )));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(EngineError::Degenerate("masked_mse with no valid slots".into()));
        }
        let sse: f64 = self
            .val(pred.0)
            .iter()
            .zip(target)
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((p, t), _)| (p - t) * (p - t))
            .sum();
        let op = Op::MaskedMse { pred: pred.0, target: target.to_vec(), mask: mask.to_vec(), count };
        self.push("masked_mse", 1, 1, vec![sse / count as f64], op, &[pred.0])
    }

    /// Inverted dropout: zeroes each entry with probability `p` and scales
    /// survivors by `1/(1-p)`. `p == 0` returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var, EngineError> {
        if !(0.0..1.0).contains(&p) {
            return Err(EngineError::Argument(format!("dropout probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let (r, c) = self.dims(x.0);
        let keep: Vec<f64> = (0..r * c).map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) }).collect();
        let out = self.val(x.0).iter().zip(&keep).map(|(v, k)| v * k).collect();
        self.push("dropout", r, c, out, Op::Dropout { x: x.0, keep }, &[x.0])
    }

    /// Reverse pass from a scalar loss; returns gradients for every
    /// reachable parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients, EngineError> {
        let mut grads = Gradients::empty(self.params.len());
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Graph::backward`] but adds into an existing gradient set.
    pub fn backward_into(&self, loss: Var, grads: &mut Gradients) -> Result<(), EngineError> {
        let (r, c) = self.dims(loss.0);
        if r * c != 1 {
            return Err(EngineError::Shape(format!("backward needs a scalar loss, got {r}x{c}")));
        }
        let mut adj: Vec<Option<Vec<f64>>> = Vec::new();
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = adj[i].take() else { continue };
            self.propagate(i, &dy, &mut adj, grads);
        }
        if grads.is_finite() {
            Ok(())
        } else {
            Err(EngineError::Numeric("non-finite gradient".into()))
        }
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn numel(&self, i: usize) -> usize {
        self.nodes[i].rows * self.nodes[i].cols
    }

    fn propagate(&self, i: usize, dy: &[f64], adj: &mut [Option<Vec<f64>>], grads: &mut Gradients) {
        let node = &self.nodes[i];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => grads.add_to(*id, dy),
            &Op::MatMul { a, b } => {
                let (m, k) = self.dims(a);
                let n = cols;
                if self.wants(a) {
                    let buf = slot(adj, a, m * k);
                    gemm(Operand::new(dy, m, n), Operand::new(self.val(b), k, n).t(), buf, 1.0);
                }
                if self.wants(b) {
                    let buf = slot(adj, b, k * n);
                    gemm(Operand::new(self.val(a), m, k).t(), Operand::new(dy, m, n), buf, 1.0);
                }
            }
            &Op::MatMulNt { a, b } => {
                let (m, k) = self.dims(a);
                let n = cols;
                if self.wants(a) {
                    let buf = slot(adj, a, m * k);
                    gemm(Operand::new(dy, m, n), Operand::new(self.val(b), n, k), buf, 1.0);
                }
                if self.wants(b) {
                    let buf = slot(adj, b, n * k);
                    gemm(Operand::new(dy, m, n).t(), Operand::new(self.val(a), m, k), buf, 1.0);
                }
            }
            &Op::Add { a, b } => {
                for (src, sign) in [(a, 1.0), (b, 1.0)] {
                    if self.wants(src) {
                        let buf = slot(adj, src, dy.len());
                        buf.iter_mut().zip(dy).for_each(|(g, d)| *g += sign * d);
                    }
                }
            }
            &Op::Sub { a, b } => {
                for (src, sign) in [(a, 1.0), (b, -1.0)] {
                    if self.wants(src) {
                        let buf = slot(adj, src, dy.len());
                        buf.iter_mut().zip(dy).for_each(|(g, d)| *g += sign * d);
                    }
                }
            }
            &Op::Mul { a, b } => {
                if self.wants(a) {
                    let other = self.val(b);
                    let buf = slot(adj, a, dy.len());
                    buf.iter_mut().zip(dy).zip(other).for_each(|((g, d), o)| *g += d * o);
                }
                if self.wants(b) {
                    let other = self.val(a);
                    let buf = slot(adj, b, dy.len());
                    buf.iter_mut().zip(dy).zip(other).for_each(|((g, d), o)| *g += d * o);
                }
            }
            &Op::AddRow { a, row } => {
                if self.wants(a) {
                    let buf = slot(adj, a, dy.len());
                    buf.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                }
                if self.wants(row) {
                    let buf = slot(adj, row, cols);
                    for chunk in dy.chunks_exact(cols) {
                        buf.iter_mut().zip(chunk).for_each(|(g, d)| *g += d);
                    }
                }
            }
            &Op::Scale { a, factor } => {
                if self.wants(a) {
                    let buf = slot(adj, a, dy.len());
                    buf.iter_mut().zip(dy).for_each(|(g, d)| *g += factor * d);
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let d = cols;
                let g = self.val(gamma);
                if self.wants(x) {
                    let buf = slot(adj, x, rows * d);
                    let mut dxhat = vec![0.0; d];
                    for r in 0..rows {
                        let dyr = &dy[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = dyr[j] * g[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        let out = &mut buf[r * d..(r + 1) * d];
                        for j in 0..d {
                            out[j] += rstd[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                }
                if self.wants(gamma) {
                    let buf = slot(adj, gamma, d);
                    for (dyr, xh) in dy.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        buf.iter_mut().zip(dyr).zip(xh).for_each(|((b, g), h)| *b += g * h);
                    }
                }
                if self.wants(beta) {
                    let buf = slot(adj, beta, d);
                    for dyr in dy.chunks_exact(d) {
                        buf.iter_mut().zip(dyr).for_each(|(b, g)| *b += g);
                    }
                }
            }
            &Op::MaskedSoftmax { x } => {
                if self.wants(x) {
                    let y = self.val(i);
                    let buf = slot(adj, x, rows * cols);
                    for ((yr, dyr), out) in y.chunks_exact(cols).zip(dy.chunks_exact(cols)).zip(buf.chunks_exact_mut(cols)) {
                        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
                        for ((o, &p), &g) in out.iter_mut().zip(yr).zip(dyr) {
                            *o += p * (g - dot);
                        }
                    }
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (q, k, v, heads) = (*q, *k, *v, *heads);
                let (m, d) = (rows, cols);
                let n = self.dims(k).0;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qv, kv, vv) = (self.val(q), self.val(k), self.val(v));
                let need_qk = self.wants(q) || self.wants(k);
                let mut dq = vec![0.0; if self.wants(q) { m * d } else { 0 }];
                let mut dk = vec![0.0; if self.wants(k) { n * d } else { 0 }];
                let mut dv = vec![0.0; if self.wants(v) { n * d } else { 0 }];
                let mut ds = vec![0.0; if need_qk { m * n } else { 0 }];
                for (h, p) in probs.chunks_exact(m * n).enumerate() {
                    let c0 = h * dh;
                    if self.wants(v) {
                        gemm_block(1.0, Block::new(p, n, 0, n).t(), Block::new(dy, d, c0, dh), 1.0, &mut dv, d, c0);
                    }
                    if !need_qk {
                        continue;
                    }
                    gemm_block(1.0, Block::new(dy, d, c0, dh), Block::new(vv, d, c0, dh).t(), 0.0, &mut ds, n, 0);
                    for (g, pr) in ds.chunks_exact_mut(n).zip(p.chunks_exact(n)) {
                        let dot: f64 = g.iter().zip(pr).map(|(a, b)| a * b).sum();
                        g.iter_mut().zip(pr).for_each(|(a, &b)| *a = b * (*a - dot));
                    }
                    if self.wants(q) {
                        gemm_block(scale, Block::new(&ds, n, 0, n), Block::new(kv, d, c0, dh), 1.0, &mut dq, d, c0);
                    }
                    if self.wants(k) {
                        gemm_block(scale, Block::new(&ds, n, 0, n).t(), Block::new(qv, d, c0, dh), 1.0, &mut dk, d, c0);
                    }
                }
                for (src, buf) in [(q, dq), (k, dk), (v, dv)] {
                    if !buf.is_empty() {
                        let dst = slot(adj, src, buf.len());
                        dst.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
                    }
                }
            }
            &Op::LeakyRelu { x, slope } => {
                if self.wants(x) {
                    let xv = self.val(x);
                    let buf = slot(adj, x, dy.len());
                    for ((b, &d), &v) in buf.iter_mut().zip(dy).zip(xv) {
                        *b += if v >= 0.0 { d } else { slope * d };
                    }
                }
            }
            &Op::SliceCols { a, start } => {
                if self.wants(a) {
                    let ac = self.dims(a).1;
                    let buf = slot(adj, a, self.numel(a));
                    for (r, chunk) in dy.chunks_exact(cols).enumerate() {
                        let dst = &mut buf[r * ac + start..r * ac + start + cols];
                        dst.iter_mut().zip(chunk).for_each(|(b, d)| *b += d);
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.dims(p).1;
                    if self.wants(p) {
                        let buf = slot(adj, p, rows * pc);
                        for r in 0..rows {
                            let src = &dy[r * cols + offset..r * cols + offset + pc];
                            buf[r * pc..(r + 1) * pc].iter_mut().zip(src).for_each(|(b, d)| *b += d);
                        }
                    }
                    offset += pc;
                }
            }
            &Op::SliceRows { a, start } => {
                if self.wants(a) {
                    let buf = slot(adj, a, self.numel(a));
                    let dst = &mut buf[start * cols..start * cols + dy.len()];
                    dst.iter_mut().zip(dy).for_each(|(b, d)| *b += d);
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.numel(p);
                    if self.wants(p) {
                        let buf = slot(adj, p, len);
                        buf.iter_mut().zip(&dy[offset..offset + len]).for_each(|(b, d)| *b += d);
                    }
                    offset += len;
                }
            }
            Op::GatherRows { table, index } => {
                let table = *table;
                if self.wants(table) {
                    let buf = slot(adj, table, self.numel(table));
                    for (chunk, &row) in dy.chunks_exact(cols).zip(index) {
                        buf[row * cols..(row + 1) * cols].iter_mut().zip(chunk).for_each(|(b, d)| *b += d);
                    }
                }
            }
            &Op::Sum { a } => {
                if self.wants(a) {
                    let buf = slot(adj, a, self.numel(a));
                    buf.iter_mut().for_each(|b| *b += dy[0]);
                }
            }
            Op::MaskedMse { pred, target, mask, count } => {
                let pred = *pred;
                if self.wants(pred) {
                    let p = self.val(pred);
                    let scale = 2.0 * dy[0] / *count as f64;
                    let buf = slot(adj, pred, p.len());
                    for (((b, &pv), &t), &m) in buf.iter_mut().zip(p).zip(target).zip(mask) {
                        if m {
                            *b += scale * (pv - t);
                        }
                    }
                }
            }
            Op::Dropout { x, keep } => {
                let x = *x;
                if self.wants(x) {
                    let buf = slot(adj, x, dy.len());
                    buf.iter_mut().zip(dy).zip(keep).for_each(|((b, d), k)| *b += d * k);
                }
            }
        }
    }
}
