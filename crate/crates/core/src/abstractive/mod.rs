//! Abstractive summarization: a Transformer decoder over the document
//! encoder, label-smoothed training, separate encoder and decoder Adam
//! schedules, two-stage initialization and beam search.

mod beam;

pub use beam::{beam_search, length_penalty, repeated_trigrams, BeamConfig, BeamResult};

use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig, ENCODER_PREFIX};
use crate::error::{Error, Result};
use crate::extractive::extractive_lr;
use crate::numerics::{
    sinusoid_table, AdamConfig, AdamState, AttentionMask, DecoderLayer, Dropout, DropoutPlacement, GradBuffer, Linear,
    ParamId, ParamStore, Tape, Var,
};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tokenizer::{EncodedDocument, PAD_ID};

pub const DECODER_PREFIX: &str = "decoder.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbstractiveConfig {
    pub encoder: EncoderConfig,
    pub decoder_layers: usize,
    pub decoder_ffn_width: usize,
    /// Dropout on the input of every affine map in the decoder.
    pub decoder_dropout: f64,
    pub label_smoothing: f64,
    /// Feed the decoder from the encoder's token table instead of its own.
    pub share_embeddings: bool,
}

impl AbstractiveConfig {
    /// Two decoder layers of the encoder's width with FFN 512.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            encoder: EncoderConfig::desk(vocab_size),
            decoder_layers: 2,
            decoder_ffn_width: 512,
            decoder_dropout: 0.1,
            label_smoothing: 0.1,
            share_embeddings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.decoder_ffn_width == 0 {
            return Err(Error::input("decoder_ffn_width must be positive"));
        }
        if !(0.0..1.0).contains(&self.decoder_dropout) {
            return Err(Error::input(format!("decoder_dropout {} outside [0, 1)", self.decoder_dropout)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::input(format!("label_smoothing {} outside [0, 1)", self.label_smoothing)));
        }
        Ok(())
    }
}

/// Target embeddings, decoder layers and the untied output projection,
/// under `decoder.`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub token_embedding: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub output: Linear,
    pub width: usize,
    pub dropout: Dropout,
}

impl Decoder {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        config: &AbstractiveConfig,
        shared_embedding: Option<ParamId>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let enc = &config.encoder;
        let token_embedding = match shared_embedding {
            Some(id) => id,
            None => store.normal("decoder.token_embedding", &[enc.vocab_size, enc.width], rng),
        };
        let layers = (0..config.decoder_layers)
            .map(|i| {
                DecoderLayer::init(
                    store,
                    &format!("decoder.layer{i}"),
                    enc.width,
                    enc.heads,
                    config.decoder_ffn_width,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            token_embedding,
            layers,
            output: Linear::init(store, "decoder.output", enc.width, enc.vocab_size, rng),
            width: enc.width,
            dropout: Dropout {
                p: config.decoder_dropout,
                placement: DropoutPlacement::BeforeLinear,
            },
        })
    }

    /// Vocabulary logits for every target position. Position `i` sees
    /// targets `≤ i` and every valid memory position.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        target_ids: &[usize],
        memory: Var,
        memory_valid: &[bool],
    ) -> Result<Var> {
        let n = target_ids.len();
        if n == 0 {
            return Err(Error::contract("decoder input is empty"));
        }
        if memory_valid.len() != tape.value(memory).rows() {
            return Err(Error::dim("decoder memory mask", tape.value(memory).shape(), &[memory_valid.len()]));
        }
        let table = tape.param(self.token_embedding);
        let emb = tape.gather_rows(table, target_ids)?;
        let emb = tape.scale(emb, S::of(self.width as f64).sqrt());
        let pe = tape.constant(sinusoid_table(n, self.width));
        let mut y = tape.add(emb, pe)?;
        let valid: Vec<bool> = target_ids.iter().map(|&t| t != PAD_ID).collect();
        let self_bias = tape.constant(AttentionMask::causal(&valid)?.to_bias());
        let cross_bias = tape.constant(AttentionMask::keys_valid(n, memory_valid)?.to_bias());
        for layer in &self.layers {
            y = layer.forward(tape, y, memory, self_bias, cross_bias, self.dropout)?;
        }
        let y = tape.dropout(y, self.dropout.p);
        self.output.forward(tape, y)
    }
}

/// Cross-entropy against label-smoothed targets, averaged over positions
/// whose target is not `pad_id`.
pub fn label_smoothed_nll<S: Scalar>(
    tape: &mut Tape<'_, S>,
    logits: Var,
    target_ids: &[usize],
    smoothing: f64,
    pad_id: usize,
) -> Result<Var> {
    let targets: Vec<Option<usize>> = target_ids.iter().map(|&t| (t != pad_id).then_some(t)).collect();
    tape.smoothed_nll(logits, &targets, smoothing)
}

#[derive(Clone, Debug)]
pub struct AbstractiveModel<S: Scalar = f64> {
    pub config: AbstractiveConfig,
    pub store: ParamStore<S>,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl<S: Scalar> AbstractiveModel<S> {
    /// Fresh model; the encoder draws from `encoder_rng` and the decoder
    /// from `decoder_rng`.
    pub fn new(config: AbstractiveConfig, encoder_rng: &mut Rng, decoder_rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let encoder = Encoder::init(&mut store, config.encoder.clone(), encoder_rng)?;
        let shared = config.share_embeddings.then_some(encoder.token_embedding);
        let decoder = Decoder::init(&mut store, &config, shared, decoder_rng)?;
        Ok(Self {
            config,
            store,
            encoder,
            decoder,
        })
    }

    /// Encoder output for a source document.
    pub fn encode(&self, tape: &mut Tape<'_, S>, src: &EncodedDocument) -> Result<Var> {
        self.encoder.forward(tape, src)
    }

    /// Teacher-forced logits: input `tgt[..n-1]`, predicting `tgt[1..]`.
    pub fn logits(&self, tape: &mut Tape<'_, S>, src: &EncodedDocument, tgt: &[usize]) -> Result<Var> {
        if tgt.len() < 2 {
            return Err(Error::input("target needs at least [BOS] and one token"));
        }
        let memory = self.encode(tape, src)?;
        self.decoder.forward(tape, &tgt[..tgt.len() - 1], memory, &vec![true; src.len()])
    }

    pub fn loss(&self, tape: &mut Tape<'_, S>, src: &EncodedDocument, tgt: &[usize]) -> Result<Var> {
        let logits = self.logits(tape, src, tgt)?;
        label_smoothed_nll(tape, logits, &tgt[1..], self.config.label_smoothing, PAD_ID)
    }

    /// Loads every `encoder.` parameter from `source`, whose encoder config
    /// must match on every structural field.
    pub fn copy_encoder_from(&mut self, source: &ParamStore<S>, source_config: &EncoderConfig) -> Result<()> {
        let mut theirs = source_config.clone();
        theirs.dropout = self.config.encoder.dropout;
        if let Some(field) = self.config.encoder.first_difference(&theirs) {
            return Err(Error::input(format!("encoder config differs in {field}")));
        }
        self.store.copy_prefix_from(source, ENCODER_PREFIX)?;
        Ok(())
    }
}

/// Builds an abstractive model whose encoder is copied from a fine-tuned
/// extractive model; the extractive head is dropped and the decoder is
/// freshly drawn from `decoder_rng`.
pub fn two_stage_init<S: Scalar>(
    ext_store: &ParamStore<S>,
    ext_config: &EncoderConfig,
    config: AbstractiveConfig,
    decoder_rng: &mut Rng,
) -> Result<AbstractiveModel<S>> {
    let mut scratch = crate::rng::SeedStreams::new(0).stream(crate::rng::INIT);
    let mut model = AbstractiveModel::new(config, &mut scratch, decoder_rng)?;
    model.copy_encoder_from(ext_store, ext_config)?;
    Ok(model)
}

/// Base rates and warmups of the two optimizers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSchedule {
    pub encoder_lr: f64,
    pub encoder_warmup: u64,
    pub decoder_lr: f64,
    pub decoder_warmup: u64,
}

impl Default for DualSchedule {
    fn default() -> Self {
        Self {
            encoder_lr: 2e-3,
            encoder_warmup: 20_000,
            decoder_lr: 0.1,
            decoder_warmup: 10_000,
        }
    }
}

/// `(lr_enc, lr_dec)` at `step`, each with its own warmup.
pub fn dual_lr(step: u64, schedule: &DualSchedule) -> Result<(f64, f64)> {
    Ok((
        extractive_lr(step, schedule.encoder_warmup, schedule.encoder_lr)?,
        extractive_lr(step, schedule.decoder_warmup, schedule.decoder_lr)?,
    ))
}

/// Two Adam optimizers over a disjoint, exhaustive split of the model's
/// parameters: `encoder.*` and `decoder.*`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualOptimizer<S: Scalar = f64> {
    pub schedule: DualSchedule,
    pub encoder: AdamState<S>,
    pub decoder: AdamState<S>,
    /// Keep the encoder fixed (its optimizer still counts steps).
    pub freeze_encoder: bool,
}

impl<S: Scalar> DualOptimizer<S> {
    pub fn new(store: &ParamStore<S>, schedule: DualSchedule, adam: AdamConfig) -> Result<Self> {
        let (enc, dec) = Self::partition(store)?;
        Ok(Self {
            schedule,
            encoder: AdamState::new(adam, enc, store),
            decoder: AdamState::new(adam, dec, store),
            freeze_encoder: false,
        })
    }

    /// Splits parameters by name prefix; any other name is an error.
    pub fn partition(store: &ParamStore<S>) -> Result<(Vec<ParamId>, Vec<ParamId>)> {
        let (mut enc, mut dec) = (Vec::new(), Vec::new());
        for (id, p) in store.iter() {
            if p.name.starts_with(ENCODER_PREFIX) {
                enc.push(id);
            } else if p.name.starts_with(DECODER_PREFIX) {
                dec.push(id);
            } else {
                return Err(Error::contract(format!("parameter {} belongs to neither optimizer", p.name)));
            }
        }
        Ok((enc, dec))
    }

    pub fn step_count(&self) -> u64 {
        self.decoder.step_count()
    }

    /// Steps both optimizers with their scheduled rates; returns the rates used.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &GradBuffer<S>) -> Result<(f64, f64)> {
        let (lr_e, lr_d) = dual_lr(self.step_count() + 1, &self.schedule)?;
        let lr_e = if self.freeze_encoder { 0.0 } else { lr_e };
        self.encoder.step(store, grads, lr_e)?;
        self.decoder.step(store, grads, lr_d)?;
        Ok((lr_e, lr_d))
    }
}
