//! `select` and `decode`.

use std::path::Path;

use bertsum::abstractive::{beam_search, BeamConfig};
use bertsum::corpus::{Document, Strictness};
use bertsum::extractive::{lead_baseline, ranking, select_summary};
use bertsum::metrics::flatten_words;
use bertsum::tokenizer::{decode_ids, encode_document, Vocab};
use bertsum::{AbstractiveModel, ExtractiveModel};

use super::{manifest, show};
use crate::error::{CliError, CliResult};
use crate::io::{self, SummaryRecord};
use crate::train::load_corpus;

/// Indices of the nonempty sentences, in the order the encoder sees them.
fn encoded_sentences(doc: &Document) -> Vec<usize> {
    (0..doc.src.len()).filter(|&i| !doc.src[i].is_empty()).collect()
}

/// Top-`k` sentences of `doc` by model score, with or without trigram
/// blocking. Returns source sentence indices in document order and the
/// lowercased words of the selection.
pub fn extract_summary(
    model: &ExtractiveModel,
    vocab: &Vocab,
    doc: &Document,
    k: usize,
    block_trigrams: bool,
) -> CliResult<(Vec<usize>, Vec<String>)> {
    let enc = encode_document(doc, vocab, model.config.encoder.max_pos)?;
    let scores = model.predict(&enc)?;
    let kept: Vec<usize> = encoded_sentences(doc).into_iter().take(enc.n_sentences).collect();
    let positions = if block_trigrams {
        let sentences: Vec<Vec<String>> = kept.iter().map(|&i| doc.src[i].clone()).collect();
        select_summary(&scores, &sentences, k)?
    } else {
        let mut top: Vec<usize> = ranking(&scores).into_iter().take(k).collect();
        top.sort_unstable();
        top
    };
    let indices: Vec<usize> = positions.into_iter().map(|p| kept[p]).collect();
    Ok((indices.clone(), selected_words(doc, &indices)))
}

fn selected_words(doc: &Document, indices: &[usize]) -> Vec<String> {
    let chosen: Vec<Vec<String>> = indices.iter().map(|&i| doc.src[i].clone()).collect();
    flatten_words(&chosen)
}

fn selected_text(doc: &Document, indices: &[usize]) -> String {
    indices.iter().map(|&i| doc.src[i].join(" ")).collect::<Vec<_>>().join(" ")
}

/// Beam-decoded summary text and its length-penalized score.
pub fn abstract_summary(model: &AbstractiveModel, vocab: &Vocab, doc: &Document, beam: &BeamConfig) -> CliResult<(String, f64)> {
    let enc = encode_document(doc, vocab, model.config.encoder.max_pos)?;
    let result = beam_search(model, &enc, beam)?;
    Ok((decode_ids(&result.tokens, vocab)?, result.score))
}

pub enum Selector<'a> {
    Model { checkpoint: &'a Path, block_trigrams: bool },
    Lead,
}

pub fn select(selector: Selector<'_>, input: &Path, output: &Path, k: usize, strictness: Strictness) -> CliResult<()> {
    if k == 0 {
        return Err(CliError::input("selection size must be at least 1"));
    }
    let docs = load_corpus(input, strictness)?;
    let mut settings = vec![("input", show(input)), ("k", k.to_string())];
    let records = match selector {
        Selector::Lead => {
            settings.push(("lead", "true".into()));
            docs.iter()
                .map(|d| {
                    let indices = lead_baseline(d.src.len(), k)?;
                    Ok(SummaryRecord {
                        id: d.id.clone(),
                        summary: selected_text(d, &indices),
                        indices: Some(indices),
                        score: None,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?
        }
        Selector::Model {
            checkpoint,
            block_trigrams,
        } => {
            settings.push(("checkpoint", show(checkpoint)));
            settings.push(("block_trigrams", block_trigrams.to_string()));
            let (model, vocab, _) = io::load_extractive(checkpoint)?;
            docs.iter()
                .map(|d| {
                    let (indices, _) = extract_summary(&model, &vocab, d, k, block_trigrams)?;
                    Ok(SummaryRecord {
                        id: d.id.clone(),
                        summary: selected_text(d, &indices),
                        indices: Some(indices),
                        score: None,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?
        }
    };
    io::write_jsonl(output, &records)?;
    eprintln!("selected summaries for {} documents", records.len());
    manifest(output, "select", &settings)
}

pub fn decode(checkpoint: &Path, input: &Path, output: &Path, beam: BeamConfig, strictness: Strictness) -> CliResult<()> {
    let docs = load_corpus(input, strictness)?;
    let (model, vocab, _) = io::load_abstractive(checkpoint)?;
    let records = docs
        .iter()
        .map(|d| {
            let (summary, score) = abstract_summary(&model, &vocab, d, &beam)?;
            Ok(SummaryRecord {
                id: d.id.clone(),
                summary,
                indices: None,
                score: Some(score),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    io::write_jsonl(output, &records)?;
    eprintln!("decoded {} documents", records.len());
    manifest(
        output,
        "decode",
        &[
            ("input", show(input)),
            ("checkpoint", show(checkpoint)),
            ("beam", beam.beam.to_string()),
            ("alpha", beam.alpha.to_string()),
            ("max_len", beam.max_len.to_string()),
            ("min_len", beam.min_len.to_string()),
            ("block_trigrams", beam.block_trigrams.to_string()),
        ],
    )
}
