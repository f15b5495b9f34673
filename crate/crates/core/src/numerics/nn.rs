//! Affine maps, multi-head attention, position-wise FFN and the post-norm
//! Transformer layer, all recorded on a [`Tape`].

use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var, MASK_BIAS};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

pub const LN_EPS: f64 = 1e-6;

/// `y = x·W + b` with `W` stored as `d_in × d_out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, name: &str, d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        Self {
            weight: store.normal(&format!("{name}.weight"), &[d_in, d_out], rng),
            bias: store.zeros(&format!("{name}.bias"), &[d_out]),
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerNormWeights {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormWeights {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, name: &str, d: usize) -> Self {
        Self {
            gain: store.ones(&format!("{name}.gain"), &[d]),
            bias: store.zeros(&format!("{name}.bias"), &[d]),
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b, LN_EPS)
    }
}

/// Where dropout sits inside a block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutPlacement {
    /// On each sub-layer output before the residual sum.
    #[default]
    Residual,
    /// On the input of every affine map.
    BeforeLinear,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    pub p: f64,
    pub placement: DropoutPlacement,
}

impl Dropout {
    pub const NONE: Dropout = Dropout {
        p: 0.0,
        placement: DropoutPlacement::Residual,
    };

    fn before_linear<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Var {
        match self.placement {
            DropoutPlacement::BeforeLinear => tape.dropout(x, self.p),
            DropoutPlacement::Residual => x,
        }
    }

    fn residual<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Var {
        match self.placement {
            DropoutPlacement::Residual => tape.dropout(x, self.p),
            DropoutPlacement::BeforeLinear => x,
        }
    }
}

/// Boolean visibility matrix: `allowed(q, k)` says whether query position
/// `q` may attend to key position `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    queries: usize,
    keys: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(queries: usize, keys: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != queries * keys {
            return Err(Error::dim("AttentionMask", &[queries, keys], &[allowed.len()]));
        }
        let mask = Self { queries, keys, allowed };
        if let Some(q) = (0..queries).find(|&q| !mask.row(q).iter().any(|&a| a)) {
            return Err(Error::contract(format!("attention row {q} is fully masked")));
        }
        Ok(mask)
    }

    /// Every query sees every key.
    pub fn full(queries: usize, keys: usize) -> Self {
        Self {
            queries,
            keys,
            allowed: vec![true; queries * keys],
        }
    }

    /// Every query sees the keys flagged valid (`true` = real token).
    pub fn keys_valid(queries: usize, key_valid: &[bool]) -> Result<Self> {
        let allowed = (0..queries).flat_map(|_| key_valid.iter().copied()).collect();
        Self::new(queries, key_valid.len(), allowed)
    }

    /// Position `q` sees keys `k ≤ q` that are flagged valid.
    pub fn causal(key_valid: &[bool]) -> Result<Self> {
        let n = key_valid.len();
        let allowed = (0..n)
            .flat_map(|q| (0..n).map(move |k| (q, k)))
            .map(|(q, k)| k <= q && (key_valid[k] || k == q))
            .collect();
        Self::new(n, n, allowed)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.queries, self.keys)
    }

    pub fn row(&self, q: usize) -> &[bool] {
        &self.allowed[q * self.keys..(q + 1) * self.keys]
    }

    pub fn is_allowed(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.keys + k]
    }

    /// Additive bias: 0 where allowed, `-1e9` elsewhere.
    pub fn to_bias<S: Scalar>(&self) -> Tensor<S> {
        let data = self
            .allowed
            .iter()
            .map(|&a| if a { S::zero() } else { S::of(MASK_BIAS) })
            .collect();
        Tensor::new(&[self.queries, self.keys], data).expect("mask shape is positive")
    }
}

/// Query/key/value/output projections of one multi-head attention block.
/// Each projection is `d × d`; head `h` uses columns `h·d/H .. (h+1)·d/H`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionWeights {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub width: usize,
}

impl AttentionWeights {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, name: &str, width: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::input(format!("width {width} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::init(store, &format!("{name}.query"), width, width, rng),
            key: Linear::init(store, &format!("{name}.key"), width, width, rng),
            value: Linear::init(store, &format!("{name}.value"), width, width, rng),
            output: Linear::init(store, &format!("{name}.output"), width, width, rng),
            heads,
            width,
        })
    }

    /// Scaled dot-product attention of `q_in` over `kv_in`.
    ///
    /// `mask_bias` is the additive bias from [`AttentionMask::to_bias`],
    /// already recorded on the tape so every layer can share it.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        q_in: Var,
        kv_in: Var,
        mask_bias: Var,
        dropout: Dropout,
    ) -> Result<Var> {
        for v in [q_in, kv_in] {
            if tape.value(v).cols() != self.width {
                return Err(Error::dim("multi_head_attention", tape.value(v).shape(), &[self.width]));
            }
        }
        let (nq, nk) = (tape.value(q_in).rows(), tape.value(kv_in).rows());
        if tape.value(mask_bias).shape() != [nq, nk] {
            return Err(Error::dim("multi_head_attention mask", tape.value(mask_bias).shape(), &[nq, nk]));
        }
        let q_src = dropout.before_linear(tape, q_in);
        let kv_src = if kv_in == q_in { q_src } else { dropout.before_linear(tape, kv_in) };
        let q = self.query.forward(tape, q_src)?;
        let k = self.key.forward(tape, kv_src)?;
        let v = self.value.forward(tape, kv_src)?;

        let dh = self.width / self.heads;
        let scale = S::one() / S::of(dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, dh)?,
                    tape.slice_cols(k, h * dh, dh)?,
                    tape.slice_cols(v, h * dh, dh)?,
                )
            };
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let scores = tape.add(scores, mask_bias)?;
            let probs = tape.softmax(scores);
            heads.push(tape.matmul(probs, vh)?);
        }
        let ctx = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        let ctx = dropout.before_linear(tape, ctx);
        self.output.forward(tape, ctx)
    }
}

/// `w2·gelu(w1·x + b1) + b2`, position-wise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, name: &str, width: usize, ffn_width: usize, rng: &mut Rng) -> Self {
        Self {
            inner: Linear::init(store, &format!("{name}.inner"), width, ffn_width, rng),
            outer: Linear::init(store, &format!("{name}.outer"), ffn_width, width, rng),
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var, dropout: Dropout) -> Result<Var> {
        let x = dropout.before_linear(tape, x);
        let h = self.inner.forward(tape, x)?;
        let h = tape.gelu(h);
        let h = dropout.before_linear(tape, h);
        self.outer.forward(tape, h)
    }
}

/// One post-norm encoder layer:
/// `h̃ = LN(h + MHAtt(h))`, `h' = LN(h̃ + FFN(h̃))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransformerLayer {
    pub attention: AttentionWeights,
    pub attention_norm: LayerNormWeights,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNormWeights,
}

impl TransformerLayer {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        width: usize,
        heads: usize,
        ffn_width: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Self {
            attention: AttentionWeights::init(store, &format!("{name}.attn"), width, heads, rng)?,
            attention_norm: LayerNormWeights::init(store, &format!("{name}.attn_norm"), width),
            ffn: FeedForward::init(store, &format!("{name}.ffn"), width, ffn_width, rng),
            ffn_norm: LayerNormWeights::init(store, &format!("{name}.ffn_norm"), width),
        })
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, h: Var, mask_bias: Var, dropout: Dropout) -> Result<Var> {
        let a = self.attention.forward(tape, h, h, mask_bias, dropout)?;
        let a = dropout.residual(tape, a);
        let r = tape.add(h, a)?;
        let h1 = self.attention_norm.forward(tape, r)?;
        let f = self.ffn.forward(tape, h1, dropout)?;
        let f = dropout.residual(tape, f);
        let r = tape.add(h1, f)?;
        self.ffn_norm.forward(tape, r)
    }
}

/// Decoder layer: masked self-attention, cross-attention over encoder
/// memory, FFN; each followed by a residual sum and layer norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderLayer {
    pub self_attention: AttentionWeights,
    pub self_norm: LayerNormWeights,
    pub cross_attention: AttentionWeights,
    pub cross_norm: LayerNormWeights,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNormWeights,
}

impl DecoderLayer {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        width: usize,
        heads: usize,
        ffn_width: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Self {
            self_attention: AttentionWeights::init(store, &format!("{name}.self_attn"), width, heads, rng)?,
            self_norm: LayerNormWeights::init(store, &format!("{name}.self_norm"), width),
            cross_attention: AttentionWeights::init(store, &format!("{name}.cross_attn"), width, heads, rng)?,
            cross_norm: LayerNormWeights::init(store, &format!("{name}.cross_norm"), width),
            ffn: FeedForward::init(store, &format!("{name}.ffn"), width, ffn_width, rng),
            ffn_norm: LayerNormWeights::init(store, &format!("{name}.ffn_norm"), width),
        })
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        y: Var,
        memory: Var,
        self_bias: Var,
        cross_bias: Var,
        dropout: Dropout,
    ) -> Result<Var> {
        let a = self.self_attention.forward(tape, y, y, self_bias, dropout)?;
        let a = dropout.residual(tape, a);
        let r = tape.add(y, a)?;
        let y1 = self.self_norm.forward(tape, r)?;
        let c = self.cross_attention.forward(tape, y1, memory, cross_bias, dropout)?;
        let c = dropout.residual(tape, c);
        let r = tape.add(y1, c)?;
        let y2 = self.cross_norm.forward(tape, r)?;
        let f = self.ffn.forward(tape, y2, dropout)?;
        let f = dropout.residual(tape, f);
        let r = tape.add(y2, f)?;
        self.ffn_norm.forward(tape, r)
    }
}

/// Sinusoid position table: `PE[p, 2i] = sin(p / 10000^(2i/d))`,
/// `PE[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn sinusoid_table<S: Scalar>(positions: usize, width: usize) -> Tensor<S> {
    let mut data = Vec::with_capacity(positions * width);
    for p in 0..positions {
        for j in 0..width {
            let exponent = (2 * (j / 2)) as f64 / width as f64;
            let angle = p as f64 / 10_000f64.powf(exponent);
            data.push(S::of(if j % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(&[positions, width], data).expect("positive table shape")
}
