//! Extractive summarization: inter-sentence Transformer layers over the
//! sentence vectors, a sigmoid scorer, oracle labels, trigram-blocked
//! selection, the lead baseline and the warmup learning-rate schedule.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::encoder::{gather_sentence_vectors, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::metrics::{flatten_words, rouge_n};
use crate::numerics::{sinusoid_table, AttentionMask, Linear, ParamStore, Tape, TransformerLayer, Var};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tokenizer::EncodedDocument;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractiveConfig {
    pub encoder: EncoderConfig,
    /// Inter-sentence Transformer layers, 0 to 4.
    pub inter_layers: usize,
    /// Weight on positive labels in the loss; 1 leaves the loss unweighted.
    pub pos_weight: f64,
}

impl ExtractiveConfig {
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            encoder: EncoderConfig::desk(vocab_size),
            inter_layers: 2,
            pos_weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.inter_layers > 4 {
            return Err(Error::input(format!("inter_layers {} outside 0..=4", self.inter_layers)));
        }
        if !(self.pos_weight > 0.0) {
            return Err(Error::input("pos_weight must be positive"));
        }
        Ok(())
    }
}

/// Inter-sentence layers and the `d → 1` scorer, under `ext.`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractiveHead {
    pub layers: Vec<TransformerLayer>,
    pub scorer: Linear,
    pub width: usize,
}

impl ExtractiveHead {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, enc: &EncoderConfig, layers: usize, rng: &mut Rng) -> Result<Self> {
        let layers = (0..layers)
            .map(|i| TransformerLayer::init(store, &format!("ext.layer{i}"), enc.width, enc.heads, enc.ffn_width, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            scorer: Linear::init(store, "ext.scorer", enc.width, 1, rng),
            width: enc.width,
        })
    }

    /// `h⁰ = T + PE`, then every layer with attention over valid sentences.
    pub fn inter_sentence_encode<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        sentences: Var,
        pad_mask: &[bool],
        dropout: crate::numerics::Dropout,
    ) -> Result<Var> {
        let n = tape.value(sentences).rows();
        if tape.value(sentences).cols() != self.width {
            return Err(Error::dim("inter_sentence_encode", tape.value(sentences).shape(), &[n, self.width]));
        }
        let pe = tape.constant(sinusoid_table(n, self.width));
        let mut h = tape.add(sentences, pe)?;
        if self.layers.is_empty() {
            return Ok(h);
        }
        let bias = AttentionMask::keys_valid(n, pad_mask)?.to_bias();
        let bias = tape.constant(bias);
        for layer in &self.layers {
            h = layer.forward(tape, h, bias, dropout)?;
        }
        Ok(h)
    }

    /// `σ(h·W_o + b_o)` as an `n × 1` column.
    pub fn score<S: Scalar>(&self, tape: &mut Tape<'_, S>, h: Var) -> Result<Var> {
        let z = self.scorer.forward(tape, h)?;
        Ok(tape.sigmoid(z))
    }
}

/// Mean binary cross-entropy of sentence scores against 0/1 labels.
pub fn bce_loss<S: Scalar>(tape: &mut Tape<'_, S>, scores: Var, labels: &[u8], pos_weight: f64) -> Result<Var> {
    let y: Vec<S> = labels.iter().map(|&l| S::of(f64::from(l))).collect();
    tape.bce(scores, &y, S::of(pos_weight))
}

#[derive(Clone, Debug)]
pub struct ExtractiveModel<S: Scalar = f64> {
    pub config: ExtractiveConfig,
    pub store: ParamStore<S>,
    pub encoder: Encoder,
    pub head: ExtractiveHead,
}

impl<S: Scalar> ExtractiveModel<S> {
    pub fn new(config: ExtractiveConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let encoder = Encoder::init(&mut store, config.encoder.clone(), rng)?;
        let head = ExtractiveHead::init(&mut store, &config.encoder, config.inter_layers, rng)?;
        Ok(Self {
            config,
            store,
            encoder,
            head,
        })
    }

    /// Sentence scores of one document as an `n_sentences × 1` variable.
    pub fn forward(&self, tape: &mut Tape<'_, S>, doc: &EncodedDocument) -> Result<Var> {
        let t = self.encoder.forward(tape, doc)?;
        let sentences = gather_sentence_vectors(tape, t, &doc.cls_positions)?;
        let h = self
            .head
            .inter_sentence_encode(tape, sentences, &vec![true; doc.n_sentences], self.config.encoder.dropout())?;
        self.head.score(tape, h)
    }

    /// BCE of the document's scores against its labels.
    pub fn loss(&self, tape: &mut Tape<'_, S>, doc: &EncodedDocument) -> Result<Var> {
        let labels = doc
            .labels
            .as_ref()
            .ok_or_else(|| Error::input(format!("document {} has no labels", doc.id)))?;
        let scores = self.forward(tape, doc)?;
        bce_loss(tape, scores, labels, self.config.pos_weight)
    }

    /// Inference-mode scores.
    pub fn predict(&self, doc: &EncodedDocument) -> Result<Vec<f64>> {
        let mut tape = Tape::with_params(&self.store);
        let scores = self.forward(&mut tape, doc)?;
        Ok(tape.value(scores).data().iter().map(|s| s.to_f64_lossy()).collect())
    }
}

/// Which criterion produced the oracle selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleCriterion {
    Rouge2,
    /// No sentence shared a bigram with the gold summary.
    Rouge1,
    /// No sentence shared even a word; sentence 0 is labeled.
    FirstSentence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleLabels {
    pub labels: Vec<u8>,
    /// ROUGE-2 F1 of the selected sentences against the gold summary.
    pub rouge2_f1: f64,
    /// Score of the selection after each greedy addition, under `criterion`.
    pub trace: Vec<f64>,
    pub criterion: OracleCriterion,
}

fn selection_words(sentences: &[Vec<String>], selected: &[bool]) -> Vec<String> {
    let chosen: Vec<Vec<String>> = sentences
        .iter()
        .zip(selected)
        .filter(|(_, &s)| s)
        .map(|(s, _)| s.clone())
        .collect();
    flatten_words(&chosen)
}

fn greedy(sentences: &[Vec<String>], gold: &[String], n: usize, cap: usize) -> (Vec<bool>, Vec<f64>) {
    let mut selected = vec![false; sentences.len()];
    let mut trace = Vec::new();
    let mut current = 0.0;
    while trace.len() < cap {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..sentences.len() {
            if selected[i] {
                continue;
            }
            selected[i] = true;
            let f1 = rouge_n(&selection_words(sentences, &selected), gold, n).f1;
            selected[i] = false;
            if f1 > best.map_or(current, |(_, b)| b) {
                best = Some((i, f1));
            }
        }
        let Some((i, f1)) = best else { break };
        selected[i] = true;
        current = f1;
        trace.push(f1);
    }
    (selected, trace)
}

/// Greedy oracle maximizing ROUGE-2 F1 of the selected sentences (taken in
/// document order) against the gold summary.
///
/// Each round adds the sentence with the largest strict gain, smaller index
/// first on ties, until nothing improves or `max_sentences` are chosen. When
/// no sentence improves ROUGE-2 in the first round the same greedy runs on
/// ROUGE-1, and failing that sentence 0 is labeled.
pub fn greedy_oracle(sentences: &[Vec<String>], gold: &[Vec<String>], max_sentences: usize) -> Result<OracleLabels> {
    if sentences.is_empty() || gold.iter().all(Vec::is_empty) {
        return Err(Error::input("oracle needs a nonempty document and gold summary"));
    }
    let gold = flatten_words(gold);
    let cap = max_sentences.max(1);
    let (mut selected, mut trace) = greedy(sentences, &gold, 2, cap);
    let mut criterion = OracleCriterion::Rouge2;
    if trace.is_empty() {
        (selected, trace) = greedy(sentences, &gold, 1, cap);
        criterion = OracleCriterion::Rouge1;
        if trace.is_empty() {
            selected[0] = true;
            criterion = OracleCriterion::FirstSentence;
        }
    }
    Ok(OracleLabels {
        rouge2_f1: rouge_n(&selection_words(sentences, &selected), &gold, 2).f1,
        labels: selected.into_iter().map(u8::from).collect(),
        trace,
        criterion,
    })
}

fn trigrams(sentence: &[String]) -> HashSet<[String; 3]> {
    let words: Vec<String> = sentence.iter().map(|w| w.to_lowercase()).collect();
    words
        .windows(3)
        .map(|w| [w[0].clone(), w[1].clone(), w[2].clone()])
        .collect()
}

/// Sentence indices in descending score order, ties by smaller index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Walks the full ranking and keeps a sentence unless one of its word
/// trigrams already occurs in the kept set; stops at `k` sentences. The
/// result is in document order.
pub fn select_summary(scores: &[f64], sentences: &[Vec<String>], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::contract("selection size must be at least 1"));
    }
    if scores.len() != sentences.len() {
        return Err(Error::contract(format!(
            "{} scores for {} sentences",
            scores.len(),
            sentences.len()
        )));
    }
    let mut seen = HashSet::new();
    let mut chosen = Vec::new();
    for i in ranking(scores) {
        if chosen.len() == k {
            break;
        }
        let tri = trigrams(&sentences[i]);
        if tri.iter().any(|t| seen.contains(t)) {
            continue;
        }
        seen.extend(tri);
        chosen.push(i);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// First `min(k, n)` sentence indices.
pub fn lead_baseline(n_sentences: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::contract("lead size must be at least 1"));
    }
    Ok((0..k.min(n_sentences)).collect())
}

/// `base · min(step^-0.5, step · warmup^-1.5)`.
pub fn extractive_lr(step: u64, warmup: u64, base: f64) -> Result<f64> {
    if step == 0 {
        return Err(Error::contract("learning-rate schedule starts at step 1"));
    }
    if warmup == 0 {
        return Err(Error::contract("warmup must be at least 1"));
    }
    let s = step as f64;
    Ok(base * s.powf(-0.5).min(s * (warmup as f64).powf(-1.5)))
}
