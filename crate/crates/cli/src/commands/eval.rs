//! `rouge` and `analyze`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use bertsum::corpus::{Document, Strictness};
use bertsum::metrics::{flatten_words, limited_length_recall, novel_ngram_proportion, position_histogram, rouge, RougeKind};
use serde::Serialize;

use super::{manifest, show};
use crate::error::{CliError, CliResult};
use crate::io::{self, SummaryRecord};
use crate::train::load_corpus;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Protocol {
    /// ROUGE F1 of the full candidate.
    F1,
    /// Recall after cutting the candidate to the reference length.
    LimitedRecall,
}

impl Protocol {
    fn name(self) -> &'static str {
        match self {
            Protocol::F1 => "f1",
            Protocol::LimitedRecall => "limited-recall",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RougeTriple {
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
}

/// ROUGE-1, ROUGE-2 and ROUGE-L of lowercased word sequences.
pub fn rouge_triple(candidate: &[String], reference: &[String], protocol: Protocol) -> RougeTriple {
    let one = |kind| match protocol {
        Protocol::F1 => rouge(candidate, reference, kind).f1,
        Protocol::LimitedRecall => limited_length_recall(candidate, reference, kind).recall,
    };
    RougeTriple {
        rouge1: one(RougeKind::N(1)),
        rouge2: one(RougeKind::N(2)),
        rouge_l: one(RougeKind::L),
    }
}

/// Unweighted mean over documents.
pub fn mean_scores(scores: &[RougeTriple]) -> RougeTriple {
    if scores.is_empty() {
        return RougeTriple::default();
    }
    let n = scores.len() as f64;
    RougeTriple {
        rouge1: scores.iter().map(|s| s.rouge1).sum::<f64>() / n,
        rouge2: scores.iter().map(|s| s.rouge2).sum::<f64>() / n,
        rouge_l: scores.iter().map(|s| s.rouge_l).sum::<f64>() / n,
    }
}

fn summary_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Serialize)]
struct DocumentScore {
    id: String,
    #[serde(flatten)]
    scores: RougeTriple,
}

#[derive(Debug, Serialize)]
struct RougeReport {
    protocol: &'static str,
    documents: Vec<DocumentScore>,
    mean: RougeTriple,
}

fn by_id<'a>(docs: &'a [Document]) -> HashMap<&'a str, &'a Document> {
    docs.iter().map(|d| (d.id.as_str(), d)).collect()
}

fn missing_ids(hyps: &[SummaryRecord], refs: &HashMap<&str, &Document>) -> CliResult<()> {
    let mut missing: Vec<&str> = hyps
        .iter()
        .map(|h| h.id.as_str())
        .filter(|id| !refs.contains_key(id))
        .collect();
    if missing.is_empty() {
        return Ok(());
    }
    missing.sort_unstable();
    Err(CliError::input(format!("ids missing from the reference corpus: {}", missing.join(", "))))
}

pub fn rouge_cmd(
    hyp: &Path,
    reference: &Path,
    protocol: Protocol,
    output: &Path,
    table: Option<&Path>,
    strictness: Strictness,
) -> CliResult<()> {
    let hyps = io::read_summaries(hyp)?;
    let refs = load_corpus(reference, strictness)?;
    let index = by_id(&refs);
    missing_ids(&hyps, &index)?;
    let mut documents: Vec<DocumentScore> = hyps
        .iter()
        .map(|h| {
            let gold = flatten_words(index[h.id.as_str()].summary());
            DocumentScore {
                id: h.id.clone(),
                scores: rouge_triple(&summary_words(&h.summary), &gold, protocol),
            }
        })
        .collect();
    documents.sort_by(|a, b| a.id.cmp(&b.id));
    let mean = mean_scores(&documents.iter().map(|d| d.scores).collect::<Vec<_>>());
    let report = RougeReport {
        protocol: protocol.name(),
        documents,
        mean,
    };

    let width = report.documents.iter().map(|d| d.id.len()).max().unwrap_or(0).max(4);
    let mut text = format!("{:<width$}  {:>8}  {:>8}  {:>8}\n", "id", "R1", "R2", "RL");
    let mut row = |id: &str, s: &RougeTriple| {
        let _ = writeln!(text, "{id:<width$}  {:>8.4}  {:>8.4}  {:>8.4}", s.rouge1, s.rouge2, s.rouge_l);
    };
    for d in &report.documents {
        row(&d.id, &d.scores);
    }
    row("mean", &report.mean);
    print!("{text}");
    if let Some(t) = table {
        fs::write(t, &text).map_err(|e| CliError::input(format!("{}: {e}", t.display())))?;
    }
    io::write_json(output, &report)?;
    manifest(
        output,
        "rouge",
        &[("hyp", show(hyp)), ("ref", show(reference)), ("protocol", protocol.name().into())],
    )
}

fn write_csv(path: &Path, header: &str, rows: &[(String, f64)]) -> CliResult<()> {
    let mut text = format!("{header}\n");
    for (k, v) in rows {
        let _ = writeln!(text, "{k},{v}");
    }
    fs::write(path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Position histogram of selected sentences: from a `select` output when
/// given, otherwise from the corpus `labels`.
pub fn analyze_positions(
    corpus: &Path,
    selections: Option<&Path>,
    buckets: usize,
    output: &Path,
    strictness: Strictness,
) -> CliResult<()> {
    let docs = load_corpus(corpus, strictness)?;
    let (picked, lengths): (Vec<Vec<usize>>, Vec<usize>) = match selections {
        Some(path) => {
            let index = by_id(&docs);
            let hyps = io::read_summaries(path)?;
            missing_ids(&hyps, &index)?;
            hyps.iter()
                .map(|h| {
                    let indices = h.indices.clone().ok_or_else(|| {
                        CliError::input(format!("{}: record {} has no sentence indices", path.display(), h.id))
                    })?;
                    Ok((indices, index[h.id.as_str()].src.len()))
                })
                .collect::<CliResult<Vec<_>>>()?
                .into_iter()
                .unzip()
        }
        None => docs
            .iter()
            .map(|d| {
                let labels = d
                    .labels
                    .as_ref()
                    .ok_or_else(|| CliError::input(format!("document {} has no labels", d.id)))?;
                Ok(((0..labels.len()).filter(|&i| labels[i] == 1).collect(), d.src.len()))
            })
            .collect::<CliResult<Vec<_>>>()?
            .into_iter()
            .unzip(),
    };
    let h = position_histogram(&picked, &lengths, buckets).map_err(|e| CliError::input(e.to_string()))?;
    let rows: Vec<(String, f64)> = h.iter().enumerate().map(|(b, &p)| (b.to_string(), p)).collect();
    write_csv(output, "bucket,proportion", &rows)?;
    let mut settings = vec![("corpus", show(corpus)), ("buckets", buckets.to_string())];
    if let Some(s) = selections {
        settings.push(("selections", show(s)));
    }
    manifest(output, "analyze positions", &settings)
}

/// Mean proportion of summary n-grams absent from the source, for
/// `n = 1..=max_n`: of `summaries` when given, otherwise of the gold
/// summaries. Summaries shorter than `n` words are left out of that `n`.
pub fn analyze_novel(
    corpus: &Path,
    summaries: Option<&Path>,
    max_n: usize,
    output: &Path,
    strictness: Strictness,
) -> CliResult<()> {
    if max_n == 0 {
        return Err(CliError::input("--max-n must be at least 1"));
    }
    let docs = load_corpus(corpus, strictness)?;
    let pairs: Vec<(Vec<String>, Vec<String>)> = match summaries {
        Some(path) => {
            let index = by_id(&docs);
            let hyps = io::read_summaries(path)?;
            missing_ids(&hyps, &index)?;
            hyps.iter()
                .map(|h| (summary_words(&h.summary), flatten_words(&index[h.id.as_str()].src)))
                .collect()
        }
        None => docs
            .iter()
            .map(|d| (flatten_words(d.summary()), flatten_words(&d.src)))
            .collect(),
    };
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for n in 1..=max_n {
        let entry = sums.entry(n).or_default();
        for (summary, source) in &pairs {
            let r = novel_ngram_proportion(summary, source, n);
            if !r.too_short {
                entry.0 += r.proportion;
                entry.1 += 1;
            }
        }
    }
    let rows: Vec<(String, f64)> = sums
        .into_iter()
        .filter(|(_, (_, count))| *count > 0)
        .map(|(n, (sum, count))| (n.to_string(), sum / count as f64))
        .collect();
    write_csv(output, "n,proportion", &rows)?;
    let mut settings = vec![("corpus", show(corpus)), ("max_n", max_n.to_string())];
    if let Some(s) = summaries {
        settings.push(("summaries", show(s)));
    }
    manifest(output, "analyze novel", &settings)
}
