//! ROUGE, novel n-gram rates, selected-position histograms and corpus
//! statistics.
//!
//! Scores are computed on lowercased whitespace words with no stemming or
//! stopword removal. Multi-sentence texts are concatenated before scoring,
//! so ROUGE-L is the LCS of the whole concatenation.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }

    /// `F1 = 2PR/(P+R)` reduces to `2·overlap/(cand+ref)`; computing it as a
    /// single division makes equal ratios compare equal bitwise.
    fn from_counts(overlap: usize, cand: usize, refr: usize) -> Self {
        let ratio = |d: usize| if d == 0 { 0.0 } else { overlap as f64 / d as f64 };
        let (precision, recall) = (ratio(cand), ratio(refr));
        let f1 = if overlap == 0 {
            0.0
        } else {
            2.0 * overlap as f64 / (cand + refr) as f64
        };
        Self { precision, recall, f1 }
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> RougeScore {
    let cand = ngram_counts(candidate, n);
    let refr = ngram_counts(reference, n);
    let overlap: usize = cand
        .iter()
        .map(|(g, &c)| c.min(refr.get(g).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(overlap, cand.values().sum(), refr.values().sum())
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RougeKind {
    N(usize),
    L,
}

pub fn rouge<T: Eq + Hash>(candidate: &[T], reference: &[T], kind: RougeKind) -> RougeScore {
    match kind {
        RougeKind::N(n) => rouge_n(candidate, reference, n),
        RougeKind::L => rouge_l(candidate, reference),
    }
}

/// Scores a candidate cut to the reference length in words. Only the recall
/// component is meaningful under this protocol.
pub fn limited_length_recall<T: Eq + Hash>(candidate: &[T], reference: &[T], kind: RougeKind) -> RougeScore {
    let cut = &candidate[..candidate.len().min(reference.len())];
    rouge(cut, reference, kind)
}

/// Fraction of summary n-grams, counted with multiplicity, that never occur
/// in the source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NovelNgrams {
    pub proportion: f64,
    /// Set when the summary has fewer than `n` tokens; `proportion` is 0.
    pub too_short: bool,
}

pub fn novel_ngram_proportion<T: Eq + Hash>(summary: &[T], source: &[T], n: usize) -> NovelNgrams {
    if n == 0 || summary.len() < n {
        return NovelNgrams {
            proportion: 0.0,
            too_short: true,
        };
    }
    let seen: HashSet<&[T]> = if source.len() >= n { source.windows(n).collect() } else { HashSet::new() };
    let total = summary.len() - n + 1;
    let novel = summary.windows(n).filter(|g| !seen.contains(g)).count();
    NovelNgrams {
        proportion: novel as f64 / total as f64,
        too_short: false,
    }
}

/// Proportion of selected sentences per absolute position; positions at or
/// past the last bucket fall into it.
pub fn position_histogram(selections: &[Vec<usize>], doc_lengths: &[usize], buckets: usize) -> Result<Vec<f64>> {
    if buckets == 0 {
        return Err(Error::contract("position histogram needs at least one bucket"));
    }
    if selections.len() != doc_lengths.len() {
        return Err(Error::contract(format!(
            "{} selections for {} documents",
            selections.len(),
            doc_lengths.len()
        )));
    }
    let mut counts = vec![0usize; buckets];
    for (d, (sel, &len)) in selections.iter().zip(doc_lengths).enumerate() {
        for &i in sel {
            if i >= len {
                return Err(Error::contract(format!(
                    "document {d}: selected index {i} but only {len} sentences"
                )));
            }
            counts[i.min(buckets - 1)] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::contract("no selected sentences to histogram"));
    }
    Ok(counts.into_iter().map(|c| c as f64 / total as f64).collect())
}

/// Lowercased concatenation of sentences, the token stream every metric uses.
pub fn flatten_words(sentences: &[Vec<String>]) -> Vec<String> {
    sentences.iter().flatten().map(|w| w.to_lowercase()).collect()
}

/// Corpus-level averages in the style of a dataset statistics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub avg_doc_words: f64,
    pub avg_doc_sentences: f64,
    /// Documents with a nonempty gold summary; the summary averages below
    /// are over these only.
    pub summaries: usize,
    pub avg_summary_words: f64,
    pub avg_summary_sentences: f64,
    /// Mean over summarized documents of the novel-bigram proportion.
    pub novel_bigram_proportion: f64,
}

pub fn corpus_stats(documents: &[Document]) -> Result<CorpusStats> {
    if documents.is_empty() {
        return Err(Error::input("corpus is empty"));
    }
    let n = documents.len() as f64;
    let mut summaries = 0usize;
    let (mut sw, mut ss, mut novel) = (0.0, 0.0, 0.0);
    for doc in documents {
        let tgt = doc.summary();
        let words = flatten_words(tgt);
        if words.is_empty() {
            continue;
        }
        summaries += 1;
        sw += words.len() as f64;
        ss += tgt.len() as f64;
        novel += novel_ngram_proportion(&words, &flatten_words(&doc.src), 2).proportion;
    }
    let avg = |x: f64| if summaries == 0 { 0.0 } else { x / summaries as f64 };
    Ok(CorpusStats {
        documents: documents.len(),
        avg_doc_words: documents.iter().map(|d| d.num_words() as f64).sum::<f64>() / n,
        avg_doc_sentences: documents.iter().map(|d| d.src.len() as f64).sum::<f64>() / n,
        summaries,
        avg_summary_words: avg(sw),
        avg_summary_sentences: avg(ss),
        novel_bigram_proportion: avg(novel),
    })
}
