use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::AbstractiveModel;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor};
use crate::scalar::Scalar;
use crate::tokenizer::{is_reserved, EncodedDocument, BOS_ID, EOS_ID, UNK_ID};

/// `((5 + length) / 6)^alpha`.
pub fn length_penalty(length: usize, alpha: f64) -> f64 {
    ((5.0 + length as f64) / 6.0).powf(alpha)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam: usize,
    pub alpha: f64,
    /// Maximum generated tokens, `[EOS]` included.
    pub max_len: usize,
    /// `[EOS]` is forbidden until this many tokens have been generated.
    pub min_len: usize,
    pub block_trigrams: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam: 5,
            alpha: 0.95,
            max_len: 60,
            min_len: 3,
            block_trigrams: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamResult {
    /// Generated ids without `[BOS]` and `[EOS]`.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// `log_prob / length_penalty(generated length)`, `[EOS]` counted.
    pub score: f64,
    pub finished: bool,
}

#[derive(Clone, Debug)]
struct Hypothesis {
    /// `[BOS]` followed by generated ids.
    tokens: Vec<usize>,
    log_prob: f64,
}

impl Hypothesis {
    fn generated(&self) -> usize {
        self.tokens.len() - 1
    }

    fn repeats_trigram(&self, next: usize) -> bool {
        let g = &self.tokens[1..];
        if g.len() < 2 {
            return false;
        }
        let last = [g[g.len() - 2], g[g.len() - 1], next];
        g.windows(3).any(|w| w == last)
    }

    fn into_result(self, finished: bool, alpha: f64) -> BeamResult {
        let score = self.log_prob / length_penalty(self.generated().max(1), alpha);
        let mut tokens = self.tokens[1..].to_vec();
        if finished {
            tokens.pop();
        }
        BeamResult {
            tokens,
            log_prob: self.log_prob,
            score,
            finished,
        }
    }
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|&z| z - lse).collect()
}

/// Beam search from `[BOS]`.
///
/// Every step expands each live hypothesis by every allowed token, keeps the
/// `beam` best expansions by cumulative log-probability, and moves those
/// ending in `[EOS]` to the finished set. Search stops once `beam`
/// hypotheses have finished, none are live, or `max_len` tokens have been
/// generated. The answer is the finished hypothesis with the best
/// length-penalized score, or the best live one if none finished.
///
/// Reserved ids other than `[EOS]` are never generated, `[EOS]` is
/// forbidden before `min_len`, and with trigram blocking an expansion that
/// repeats a token trigram of its own hypothesis is dropped.
pub fn beam_search<S: Scalar>(model: &AbstractiveModel<S>, src: &EncodedDocument, cfg: &BeamConfig) -> Result<BeamResult> {
    if cfg.beam == 0 {
        return Err(Error::contract("beam size must be at least 1"));
    }
    if cfg.max_len == 0 {
        return Err(Error::contract("max_len must be at least 1"));
    }
    let memory: Tensor<S> = {
        let mut tape = Tape::with_params(&model.store);
        let m = model.encode(&mut tape, src)?;
        tape.value(m).clone()
    };
    let memory_valid = vec![true; src.len()];
    let next_log_probs = |tokens: &[usize]| -> Result<Vec<f64>> {
        let mut tape = Tape::with_params(&model.store);
        let mem = tape.constant(memory.clone());
        let logits = model.decoder.forward(&mut tape, tokens, mem, &memory_valid)?;
        let v = tape.value(logits);
        let row: Vec<f64> = v.row(v.rows() - 1).iter().map(|x| x.to_f64_lossy()).collect();
        Ok(log_softmax(&row))
    };

    let mut live = vec![Hypothesis {
        tokens: vec![BOS_ID],
        log_prob: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..cfg.max_len {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (h, hyp) in live.iter().enumerate() {
            let lp = next_log_probs(&hyp.tokens)?;
            for (tok, &l) in lp.iter().enumerate() {
                let allowed = if tok == EOS_ID {
                    hyp.generated() >= cfg.min_len
                } else {
                    !is_reserved(tok) || tok == UNK_ID
                };
                if !allowed || (cfg.block_trigrams && hyp.repeats_trigram(tok)) {
                    continue;
                }
                candidates.push((hyp.log_prob + l, h, tok));
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::new();
        for &(log_prob, h, tok) in candidates.iter().take(cfg.beam) {
            let mut tokens = live[h].tokens.clone();
            tokens.push(tok);
            let hyp = Hypothesis { tokens, log_prob };
            if tok == EOS_ID {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        live = next;
        if finished.len() >= cfg.beam || live.is_empty() {
            break;
        }
    }

    let best = |pool: Vec<Hypothesis>, done: bool| {
        pool.into_iter()
            .map(|h| h.into_result(done, cfg.alpha))
            .reduce(|a, b| if b.score > a.score { b } else { a })
    };
    best(finished, true)
        .or_else(|| best(live, false))
        .ok_or_else(|| Error::contract("beam search produced no hypothesis"))
}

/// Token trigrams that occur more than once in `tokens`.
pub fn repeated_trigrams(tokens: &[usize]) -> Vec<[usize; 3]> {
    let mut seen = HashSet::new();
    let mut repeats = Vec::new();
    for w in tokens.windows(3) {
        let t = [w[0], w[1], w[2]];
        if !seen.insert(t) {
            repeats.push(t);
        }
    }
    repeats
}
