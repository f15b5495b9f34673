//! Document encoder: summed token, segment and position embeddings fed
//! through a stack of bidirectional post-norm Transformer layers.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::params::INIT_STD;
use crate::numerics::{AttentionMask, Dropout, DropoutPlacement, Linear, ParamId, ParamStore, Tape, Tensor, TransformerLayer, Var};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tokenizer::{is_reserved, EncodedDocument, MASK_ID};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub max_pos: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    /// Desk-scale defaults: width 128, two layers, four heads, FFN 512.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            width: 128,
            layers: 2,
            heads: 4,
            ffn_width: 512,
            max_pos: 512,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.width == 0 || self.heads == 0 || self.ffn_width == 0 {
            return Err(Error::input("encoder sizes must be positive"));
        }
        if self.width % self.heads != 0 {
            return Err(Error::input(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.max_pos < 3 {
            return Err(Error::input(format!("max_pos {} is below 3", self.max_pos)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::input(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn dropout(&self) -> Dropout {
        Dropout {
            p: self.dropout,
            placement: DropoutPlacement::Residual,
        }
    }

    /// Name of the first field on which `self` and `other` disagree.
    pub fn first_difference(&self, other: &Self) -> Option<&'static str> {
        [
            ("vocab_size", self.vocab_size == other.vocab_size),
            ("width", self.width == other.width),
            ("layers", self.layers == other.layers),
            ("heads", self.heads == other.heads),
            ("ffn_width", self.ffn_width == other.ffn_width),
            ("max_pos", self.max_pos == other.max_pos),
            ("dropout", self.dropout == other.dropout),
        ]
        .into_iter()
        .find(|(_, same)| !same)
        .map(|(name, _)| name)
    }
}

/// Parameter handles of the encoder; values live in a [`ParamStore`] under
/// names starting with `encoder.`.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub token_embedding: ParamId,
    pub segment_embedding: ParamId,
    pub position_embedding: ParamId,
    pub layers: Vec<TransformerLayer>,
}

pub const ENCODER_PREFIX: &str = "encoder.";

impl Encoder {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, config: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.width;
        let token_embedding = store.normal("encoder.token_embedding", &[config.vocab_size, d], rng);
        let segment_embedding = store.normal("encoder.segment_embedding", &[2, d], rng);
        let position_embedding = store.normal("encoder.position_embedding", &[config.max_pos, d], rng);
        let layers = (0..config.layers)
            .map(|i| TransformerLayer::init(store, &format!("encoder.layer{i}"), d, config.heads, config.ffn_width, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            token_embedding,
            segment_embedding,
            position_embedding,
            layers,
        })
    }

    /// `token[id] + segment[seg] + position[pos]` for every input position.
    pub fn embed<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        token_ids: &[usize],
        segment_ids: &[usize],
        position_ids: &[usize],
    ) -> Result<Var> {
        let n = token_ids.len();
        if segment_ids.len() != n || position_ids.len() != n {
            return Err(Error::dim("embed", &[n], &[segment_ids.len(), position_ids.len()]));
        }
        if let Some(&p) = position_ids.iter().find(|&&p| p >= self.config.max_pos) {
            return Err(Error::contract(format!(
                "position id {p} exceeds the position table of {}; call extend_position_embeddings first",
                self.config.max_pos
            )));
        }
        if let Some(&s) = segment_ids.iter().find(|&&s| s > 1) {
            return Err(Error::contract(format!("segment id {s} is not 0 or 1")));
        }
        let tok = tape.param(self.token_embedding);
        let seg = tape.param(self.segment_embedding);
        let pos = tape.param(self.position_embedding);
        let t = tape.gather_rows(tok, token_ids)?;
        let s = tape.gather_rows(seg, segment_ids)?;
        let p = tape.gather_rows(pos, position_ids)?;
        let ts = tape.add(t, s)?;
        tape.add(ts, p)
    }

    /// Runs every layer with attention restricted to non-pad keys
    /// (`pad_mask[k]` is `true` for real tokens).
    pub fn encode<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var, pad_mask: &[bool]) -> Result<Var> {
        let n = tape.value(x).rows();
        if pad_mask.len() != n {
            return Err(Error::dim("encode pad mask", &[n], &[pad_mask.len()]));
        }
        if self.layers.is_empty() {
            return Ok(x);
        }
        let bias = AttentionMask::keys_valid(n, pad_mask)?.to_bias();
        let bias = tape.constant(bias);
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, h, bias, self.config.dropout())?;
        }
        Ok(h)
    }

    /// Embeds and encodes one unpadded document.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, doc: &EncodedDocument) -> Result<Var> {
        let x = self.embed(tape, &doc.token_ids, &doc.segment_ids, &doc.position_ids)?;
        self.encode(tape, x, &vec![true; doc.len()])
    }
}

/// Rows of `t` at the `[CLS]` positions: one vector per sentence.
pub fn gather_sentence_vectors<S: Scalar>(tape: &mut Tape<'_, S>, t: Var, cls_positions: &[usize]) -> Result<Var> {
    tape.gather_rows(t, cls_positions)
}

/// Grows the position table to `new_max` rows. Existing rows are kept
/// bitwise; new rows are drawn from `N(0, 0.02²)`.
pub fn extend_position_embeddings<S: Scalar>(
    store: &mut ParamStore<S>,
    encoder: &mut Encoder,
    new_max: usize,
    rng: &mut Rng,
) -> Result<()> {
    let old = encoder.config.max_pos;
    if new_max <= old {
        return Err(Error::input(format!("new max_pos {new_max} must exceed current {old}")));
    }
    let d = encoder.config.width;
    let mut data = store.get(encoder.position_embedding).data().to_vec();
    data.extend(Tensor::<S>::randn(&[new_max - old, d], INIT_STD, rng).into_data());
    store.replace(encoder.position_embedding, Tensor::new(&[new_max, d], data)?);
    encoder.config.max_pos = new_max;
    Ok(())
}

/// Encoder plus a vocabulary projection for masked-token prediction.
#[derive(Clone, Debug)]
pub struct PretrainModel<S: Scalar = f64> {
    pub store: ParamStore<S>,
    pub encoder: Encoder,
    pub lm_head: Linear,
}

impl<S: Scalar> PretrainModel<S> {
    pub fn new(config: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let v = config.vocab_size;
        let d = config.width;
        let encoder = Encoder::init(&mut store, config, rng)?;
        let lm_head = Linear::init(&mut store, "mlm.output", d, v, rng);
        Ok(Self { store, encoder, lm_head })
    }

    /// Mean cross-entropy of predicting the original token at every masked
    /// slot of `docs`.
    ///
    /// Each non-reserved token is replaced by `[MASK]` with probability
    /// `mask_prob`; a document whose draw masks nothing gets one uniformly
    /// chosen maskable slot so every document contributes.
    pub fn masked_lm_loss(
        &self,
        tape: &mut Tape<'_, S>,
        docs: &[&EncodedDocument],
        mask_prob: f64,
        rng: &mut Rng,
    ) -> Result<Var> {
        if !(mask_prob > 0.0 && mask_prob < 1.0) {
            return Err(Error::contract(format!("mask probability {mask_prob} outside (0, 1)")));
        }
        let mut parts = Vec::new();
        let mut total = 0usize;
        for doc in docs {
            let maskable: Vec<usize> = (0..doc.len()).filter(|&i| !is_reserved(doc.token_ids[i])).collect();
            if maskable.is_empty() {
                continue;
            }
            let mut chosen: Vec<usize> = maskable.iter().copied().filter(|_| rng.random::<f64>() < mask_prob).collect();
            if chosen.is_empty() {
                chosen.push(maskable[rng.random_range(0..maskable.len())]);
            }
            let mut ids = doc.token_ids.clone();
            let mut targets = vec![None; doc.len()];
            for &i in &chosen {
                targets[i] = Some(ids[i]);
                ids[i] = MASK_ID;
            }
            let x = self.encoder.embed(tape, &ids, &doc.segment_ids, &doc.position_ids)?;
            let h = self.encoder.encode(tape, x, &vec![true; doc.len()])?;
            let logits = self.lm_head.forward(tape, h)?;
            parts.push((tape.smoothed_nll(logits, &targets, 0.0)?, chosen.len()));
            total += chosen.len();
        }
        if parts.is_empty() {
            return Err(Error::input("batch has no maskable tokens"));
        }
        let mut loss: Option<Var> = None;
        for (l, count) in parts {
            let weighted = tape.scale(l, S::of(count as f64 / total as f64));
            loss = Some(match loss {
                Some(acc) => tape.add(acc, weighted)?,
                None => weighted,
            });
        }
        Ok(loss.expect("at least one part"))
    }
}
