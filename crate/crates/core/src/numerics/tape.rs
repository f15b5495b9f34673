//! Reverse-mode differentiation over a linear record of executed ops.
//!
//! Every op appends a node holding its output value. [`Tape::backward`]
//! walks the nodes in reverse execution order and pushes vector-Jacobian
//! products to each node's inputs.

use std::collections::HashMap;

use rand::Rng as _;

use super::params::{GradBuffer, ParamId, ParamStore};
use super::tensor::{dot, softmax_in_place, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// GELU tanh approximation: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
pub const GELU_COEFF: f64 = 0.044_715;
/// `√(2/π)`
pub const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Additive attention bias for disallowed positions.
pub const MASK_BIAS: f64 = -1e9;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S: Scalar> {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Gelu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Dropout {
        x: Var,
        mask: Vec<S>,
    },
    Sum(Var),
    Mean(Var),
    Bce {
        probs: Var,
        labels: Vec<S>,
        pos_weight: S,
        floor: S,
    },
    SmoothedNll {
        logits: Var,
        targets: Vec<Option<usize>>,
        smoothing: S,
        probs: Vec<S>,
    },
}

#[derive(Debug)]
struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Execution record for one forward pass.
///
/// A tape optionally borrows a [`ParamStore`]; [`Tape::param`] binds each
/// parameter at most once so repeated uses share one gradient slot. A tape
/// built with [`Tape::training`] applies dropout; otherwise dropout is the
/// identity.
pub struct Tape<'p, S: Scalar = f64> {
    params: Option<&'p ParamStore<S>>,
    nodes: Vec<Node<S>>,
    bound: HashMap<ParamId, Var>,
    dropout_rng: Option<Rng>,
}

impl<'p, S: Scalar> Tape<'p, S> {
    /// Tape without parameters, for pure tensor computations.
    pub fn new() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            bound: HashMap::new(),
            dropout_rng: None,
        }
    }

    /// Inference-mode tape over a parameter store.
    pub fn with_params(params: &'p ParamStore<S>) -> Self {
        Self {
            params: Some(params),
            ..Self::new()
        }
    }

    /// Training-mode tape: dropout masks are drawn from `rng`.
    pub fn training(params: &'p ParamStore<S>, rng: Rng) -> Self {
        Self {
            params: Some(params),
            dropout_rng: Some(rng),
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    /// Hands back the dropout generator so its state can carry over to the next step.
    pub fn into_dropout_rng(self) -> Option<Rng> {
        self.dropout_rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a non-trainable input.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds parameter `id` of the borrowed store.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let store = self.params.expect("tape has no parameter store");
        let v = self.push(store.get(id).clone(), Op::Param);
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a × bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(out, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = xv.cols();
        if bv.len() != c {
            return Err(Error::dim("add_row", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        let out = self.value(x).scale(c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        self.push(out, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let c = out.cols();
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        self.push(out, Op::Softmax(x))
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gain), self.value(bias));
        let d = xv.cols();
        if gv.len() != d || bv.len() != d {
            return Err(Error::dim("layer_norm", xv.shape(), gv.shape()));
        }
        let n = xv.rows();
        let inv_d = S::one() / S::of(d as f64);
        let mut out = vec![S::zero(); n * d];
        let mut xhat = vec![S::zero(); n * d];
        let mut inv_std = vec![S::zero(); n];
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<S>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_d;
            let is = S::one() / (var + S::of(eps)).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = gv.data()[j] * h + bv.data()[j];
            }
        }
        let out = Tensor::new(xv.shape(), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Rows of `table` selected by `ids`, as an `ids.len() × cols` matrix.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (rows, c) = (tv.rows(), tv.cols());
        if ids.is_empty() {
            return Err(Error::contract("gather_rows with no indices"));
        }
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            if i >= rows {
                return Err(Error::contract(format!("row index {i} out of range for {rows} rows")));
            }
            out.extend_from_slice(tv.row(i));
        }
        let out = Tensor::new(&[ids.len(), c], out)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if len == 0 || start + len > c {
            return Err(Error::contract(format!("column slice {start}..{} of {c}", start + len)));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let out = Tensor::new(&[r, len], out)?;
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        if parts.iter().any(|&p| self.value(p).rows() != r) {
            return Err(Error::contract("concat_cols with differing row counts"));
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(&[r, total], out)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Inverted dropout: zeroes entries with probability `p` and scales
    /// survivors by `1/(1-p)`. Identity on inference tapes.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        let Some(rng) = self.dropout_rng.as_mut() else {
            return x;
        };
        if p <= 0.0 {
            return x;
        }
        let keep = S::of(1.0 / (1.0 - p));
        let n = self.nodes[x.0].value.len();
        let mask: Vec<S> = (0..n)
            .map(|_| if rng.random::<f64>() < p { S::zero() } else { keep })
            .collect();
        let mut out = self.value(x).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(out, Op::Dropout { x, mask })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.sum() / S::of(v.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// Mean binary cross-entropy of probabilities against 0/1 labels.
    ///
    /// Probabilities are clamped to `[1e-9, 1 - 1e-9]` inside the logarithms;
    /// positives are weighted by `pos_weight`.
    pub fn bce(&mut self, probs: Var, labels: &[S], pos_weight: S) -> Result<Var> {
        let pv = self.value(probs);
        if pv.len() != labels.len() {
            return Err(Error::contract(format!(
                "bce: {} scores but {} labels",
                pv.len(),
                labels.len()
            )));
        }
        let floor = S::of(1e-9).max(S::epsilon());
        let n = S::of(labels.len() as f64);
        let mut total = S::zero();
        for (&p, &y) in pv.data().iter().zip(labels) {
            // `max`/`min` would turn NaN into the floor and hide divergence.
            let pc = if p.is_nan() { p } else { p.max(floor).min(S::one() - floor) };
            total -= pos_weight * y * pc.ln() + (S::one() - y) * (S::one() - pc).ln();
        }
        let out = Tensor::scalar(total / n);
        Ok(self.push(
            out,
            Op::Bce {
                probs,
                labels: labels.to_vec(),
                pos_weight,
                floor,
            },
        ))
    }

    /// Cross-entropy of row-wise softmax(logits) against label-smoothed
    /// targets: `1 - ε` on the gold id and `ε/(V-1)` on every other id.
    /// `None` targets (padding) are excluded from the average.
    pub fn smoothed_nll(&mut self, logits: Var, targets: &[Option<usize>], smoothing: f64) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, v) = (lv.rows(), lv.cols());
        if rows != targets.len() {
            return Err(Error::dim("smoothed_nll", lv.shape(), &[targets.len()]));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::contract(format!("smoothing {smoothing} outside [0, 1)")));
        }
        if smoothing > 0.0 && v < 2 {
            return Err(Error::contract("label smoothing needs at least two classes"));
        }
        let counted = targets.iter().filter(|t| t.is_some()).count();
        if counted == 0 {
            return Err(Error::input("every target position is padding"));
        }
        let eps = S::of(smoothing);
        let off = if v > 1 { eps / S::of((v - 1) as f64) } else { S::zero() };
        let on = S::one() - eps;
        let mut probs = lv.data().to_vec();
        let mut total = S::zero();
        for (r, t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = row.iter().map(|&z| (z - max).exp()).sum::<S>().ln() + max;
            softmax_in_place(&mut probs[r * v..(r + 1) * v]);
            let Some(gold) = *t else { continue };
            if gold >= v {
                return Err(Error::contract(format!("target id {gold} out of range for {v} classes")));
            }
            for (j, &z) in row.iter().enumerate() {
                let q = if j == gold { on } else { off };
                if q != S::zero() {
                    total -= q * (z - lse);
                }
            }
        }
        let out = Tensor::scalar(total / S::of(counted as f64));
        Ok(self.push(
            out,
            Op::SmoothedNll {
                logits,
                targets: targets.to_vec(),
                smoothing: eps,
                probs,
            },
        ))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), S::one()));
        let mut visit_order = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            visit_order.push(i);
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let mut bound: Vec<(ParamId, Var)> = self.bound.iter().map(|(&p, &v)| (p, v)).collect();
        bound.sort();
        for &(_, v) in &bound {
            if grads[v.0].is_none() {
                grads[v.0] = Some(Tensor::zeros(self.value(v).shape()));
            }
        }
        Ok(Gradients {
            grads,
            bound,
            visit_order,
        })
    }

    fn propagate(&self, i: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param => {}
            &Op::MatMul(a, b) => {
                let da = g.matmul_nt(self.value(b))?;
                let db = self.value(a).matmul_tn(g)?;
                accumulate(grads, a, da)?;
                accumulate(grads, b, db)?;
            }
            &Op::MatMulNt(a, b) => {
                let da = g.matmul(self.value(b))?;
                let db = g.matmul_tn(self.value(a))?;
                accumulate(grads, a, da)?;
                accumulate(grads, b, db)?;
            }
            &Op::Add(a, b) => {
                accumulate(grads, a, g.clone())?;
                accumulate(grads, b, g.clone())?;
            }
            &Op::AddRow(x, bias) => {
                let c = g.cols();
                let mut db = vec![S::zero(); c];
                for row in g.data().chunks(c) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                accumulate(grads, x, g.clone())?;
                accumulate(grads, bias, Tensor::new(self.value(bias).shape(), db)?)?;
            }
            &Op::Mul(a, b) => {
                let da = g.zip_map(self.value(b), "mul", |x, y| x * y)?;
                let db = g.zip_map(self.value(a), "mul", |x, y| x * y)?;
                accumulate(grads, a, da)?;
                accumulate(grads, b, db)?;
            }
            &Op::Scale(x, c) => accumulate(grads, x, g.scale(c))?,
            &Op::Gelu(x) => {
                let dx = g.zip_map(self.value(x), "gelu", |gv, xv| gv * gelu_grad(xv))?;
                accumulate(grads, x, dx)?;
            }
            &Op::Sigmoid(x) => {
                let dx = g.zip_map(&node.value, "sigmoid", |gv, y| gv * y * (S::one() - y))?;
                accumulate(grads, x, dx)?;
            }
            &Op::Softmax(x) => {
                let y = &node.value;
                let c = y.cols();
                let mut dx = vec![S::zero(); y.len()];
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let inner = dot(yr, gr);
                    for j in 0..c {
                        dx[r * c + j] = yr[j] * (gr[j] - inner);
                    }
                }
                accumulate(grads, x, Tensor::new(y.shape(), dx)?)?;
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain);
                let d = gv.len();
                let n = g.rows();
                let inv_d = S::one() / S::of(d as f64);
                let mut dx = vec![S::zero(); n * d];
                let mut dgain = vec![S::zero(); d];
                let mut dbias = vec![S::zero(); d];
                for r in 0..n {
                    let gr = g.row(r);
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut sum_dh = S::zero();
                    let mut sum_dh_h = S::zero();
                    for j in 0..d {
                        let dh = gr[j] * gv.data()[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                        dgain[j] += gr[j] * hr[j];
                        dbias[j] += gr[j];
                    }
                    for j in 0..d {
                        let dh = gr[j] * gv.data()[j];
                        dx[r * d + j] = inv_std[r] * (dh - inv_d * sum_dh - hr[j] * inv_d * sum_dh_h);
                    }
                }
                accumulate(grads, *x, Tensor::new(g.shape(), dx)?)?;
                accumulate(grads, *gain, Tensor::new(gv.shape(), dgain)?)?;
                accumulate(grads, *bias, Tensor::new(self.value(*bias).shape(), dbias)?)?;
            }
            Op::GatherRows { table, ids } => {
                let tv = self.value(*table);
                let c = tv.cols();
                let mut dt = vec![S::zero(); tv.len()];
                for (r, &id) in ids.iter().enumerate() {
                    for (d, &v) in dt[id * c..(id + 1) * c].iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                accumulate(grads, *table, Tensor::new(tv.shape(), dt)?)?;
            }
            &Op::SliceCols { x, start } => {
                let xv = self.value(x);
                let (c, len) = (xv.cols(), g.cols());
                let mut dx = vec![S::zero(); xv.len()];
                for r in 0..xv.rows() {
                    dx[r * c + start..r * c + start + len].copy_from_slice(g.row(r));
                }
                accumulate(grads, x, Tensor::new(xv.shape(), dx)?)?;
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols();
                    let mut dp = Vec::with_capacity(pv.len());
                    for r in 0..pv.rows() {
                        dp.extend_from_slice(&g.row(r)[offset..offset + w]);
                    }
                    accumulate(grads, p, Tensor::new(pv.shape(), dp)?)?;
                    offset += w;
                }
            }
            Op::Dropout { x, mask } => {
                let mut dx = g.clone();
                for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
                    *d *= m;
                }
                accumulate(grads, *x, dx)?;
            }
            &Op::Sum(x) => {
                let shape = self.value(x).shape().to_vec();
                accumulate(grads, x, Tensor::full(&shape, g.item()))?;
            }
            &Op::Mean(x) => {
                let xv = self.value(x);
                let v = g.item() / S::of(xv.len() as f64);
                accumulate(grads, x, Tensor::full(xv.shape(), v))?;
            }
            Op::Bce {
                probs,
                labels,
                pos_weight,
                floor,
            } => {
                let pv = self.value(*probs);
                let scale = g.item() / S::of(labels.len() as f64);
                let dp = pv
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&p, &y)| {
                        if p < *floor || p > S::one() - *floor {
                            S::zero()
                        } else {
                            scale * (-*pos_weight * y / p + (S::one() - y) / (S::one() - p))
                        }
                    })
                    .collect();
                accumulate(grads, *probs, Tensor::new(pv.shape(), dp)?)?;
            }
            Op::SmoothedNll {
                logits,
                targets,
                smoothing,
                probs,
            } => {
                let lv = self.value(*logits);
                let v = lv.cols();
                let counted = targets.iter().filter(|t| t.is_some()).count();
                let scale = g.item() / S::of(counted as f64);
                let off = if v > 1 {
                    *smoothing / S::of((v - 1) as f64)
                } else {
                    S::zero()
                };
                let on = S::one() - *smoothing;
                let mut dl = vec![S::zero(); lv.len()];
                for (r, t) in targets.iter().enumerate() {
                    let Some(gold) = *t else { continue };
                    for j in 0..v {
                        let q = if j == gold { on } else { off };
                        dl[r * v + j] = scale * (probs[r * v + j] - q);
                    }
                }
                accumulate(grads, *logits, Tensor::new(lv.shape(), dl)?)?;
            }
        }
        Ok(())
    }
}

impl<S: Scalar> Default for Tape<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) -> Result<()> {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<S: Scalar = f64> {
    grads: Vec<Option<Tensor<S>>>,
    bound: Vec<(ParamId, Var)>,
    visit_order: Vec<usize>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss with respect to any recorded value.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a bound parameter; every bound parameter has one.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.bound
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|&(_, v)| self.wrt(v))
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<S>)> {
        self.bound
            .iter()
            .filter_map(|&(p, v)| self.wrt(v).map(|g| (p, g)))
    }

    /// Node indices in the order the reverse pass visited them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visit_order
    }

    pub fn accumulate_into(&self, buffer: &mut GradBuffer<S>) -> Result<()> {
        for (id, g) in self.params() {
            buffer.add(id, g)?;
        }
        buffer.mark_contribution();
        Ok(())
    }
}

#[inline]
pub fn gelu<S: Scalar>(x: S) -> S {
    let half = S::of(0.5);
    let inner = S::of(GELU_SQRT_2_OVER_PI) * (x + S::of(GELU_COEFF) * x * x * x);
    half * x * (S::one() + inner.tanh())
}

#[inline]
fn gelu_grad<S: Scalar>(x: S) -> S {
    let half = S::of(0.5);
    let k = S::of(GELU_SQRT_2_OVER_PI);
    let c = S::of(GELU_COEFF);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * k * (S::one() + S::of(3.0) * c * x * x)
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
