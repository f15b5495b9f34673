//! Documents, JSONL ingestion, splits, token-budgeted batching and a
//! synthetic corpus generator for controlled experiments.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tokenizer::{EncodedDocument, PAD_ID};

/// A source document split into sentences of word tokens, with an optional
/// gold summary and optional per-sentence extraction labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub src: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tgt: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
}

impl Document {
    pub fn new(id: impl Into<String>, src: Vec<Vec<String>>) -> Self {
        Self {
            id: id.into(),
            src,
            tgt: None,
            labels: None,
        }
    }

    pub fn with_tgt(mut self, tgt: Vec<Vec<String>>) -> Self {
        self.tgt = Some(tgt);
        self
    }

    /// Checks the structural invariants every downstream consumer relies on.
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::input("document id is empty"));
        }
        if self.src.is_empty() {
            return Err(Error::input(format!("document {}: empty src", self.id)));
        }
        if let Some(i) = self.src.iter().position(Vec::is_empty) {
            return Err(Error::input(format!("document {}: src sentence {i} is empty", self.id)));
        }
        if let Some(i) = self.tgt.iter().flatten().position(Vec::is_empty) {
            return Err(Error::input(format!("document {}: tgt sentence {i} is empty", self.id)));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.src.len() {
                return Err(Error::input(format!(
                    "document {}: {} labels for {} sentences",
                    self.id,
                    labels.len(),
                    self.src.len()
                )));
            }
            if labels.iter().any(|&y| y > 1) {
                return Err(Error::input(format!("document {}: labels must be 0 or 1", self.id)));
            }
        }
        Ok(())
    }

    pub fn num_words(&self) -> usize {
        self.src.iter().map(Vec::len).sum()
    }

    /// Gold summary sentences, empty when absent.
    pub fn summary(&self) -> &[Vec<String>] {
        self.tgt.as_deref().unwrap_or(&[])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strictness {
    /// Any invalid line aborts the load.
    Strict,
    /// Invalid lines are skipped and reported.
    Lenient,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub documents: Vec<Document>,
    pub skipped: Vec<SkippedLine>,
}

/// Reads one JSON document per line. Blank lines are ignored; line numbers
/// in errors are 1-based. Duplicate ids count as invalid lines.
pub fn load_jsonl(path: &Path, strictness: Strictness) -> Result<LoadReport> {
    let file = File::open(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    read_jsonl(BufReader::new(file), strictness)
}

pub fn read_jsonl<R: BufRead>(reader: R, strictness: Strictness) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Document>(&line)
            .map_err(|e| e.to_string())
            .and_then(|doc| doc.validate().map(|()| doc).map_err(|e| e.to_string()))
            .and_then(|doc| {
                if seen.insert(doc.id.clone()) {
                    Ok(doc)
                } else {
                    Err(format!("duplicate document id {}", doc.id))
                }
            });
        match parsed {
            Ok(doc) => report.documents.push(doc),
            Err(reason) => match strictness {
                Strictness::Strict => return Err(Error::input(format!("line {}: {reason}", i + 1))),
                Strictness::Lenient => report.skipped.push(SkippedLine { line: i + 1, reason }),
            },
        }
    }
    Ok(report)
}

pub fn save_jsonl(path: &Path, documents: &[Document]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_jsonl(&mut out, documents)?;
    out.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write>(out: &mut W, documents: &[Document]) -> Result<()> {
    for doc in documents {
        serde_json::to_writer(&mut *out, doc)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Splits whitespace-tokenized text into sentences after tokens ending in
/// `.`, `!` or `?`. A convenience for plain-text input only.
pub fn split_sentences(text: &str) -> Vec<Vec<String>> {
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for word in text.split_whitespace() {
        current.push(word.to_string());
        if word.ends_with(['.', '!', '?']) {
            sentences.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    sentences
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<Document>,
    pub validation: Vec<Document>,
    pub test: Vec<Document>,
}

impl CorpusSplit {
    /// Fails if any id occurs in more than one split.
    pub fn new(train: Vec<Document>, validation: Vec<Document>, test: Vec<Document>) -> Result<Self> {
        let mut owner = std::collections::HashMap::new();
        for (split, docs) in [("train", &train), ("validation", &validation), ("test", &test)] {
            for doc in docs.iter() {
                if let Some(prev) = owner.insert(doc.id.as_str(), split) {
                    if prev != split {
                        return Err(Error::input(format!("document {} appears in both {prev} and {split}", doc.id)));
                    }
                }
            }
        }
        Ok(Self { train, validation, test })
    }
}

/// Padded, masked group of encoded documents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Indices into the slice passed to [`make_batches`].
    pub items: Vec<usize>,
    pub padded_len: usize,
    pub token_ids: Vec<Vec<usize>>,
    pub segment_ids: Vec<Vec<usize>>,
    /// `true` marks a real token, `false` a pad slot.
    pub pad_mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn padded_tokens(&self) -> usize {
        self.items.len() * self.padded_len
    }
}

/// Groups documents of similar length into batches whose padded size
/// (`documents × longest`) stays within `max_tokens`. Order within a length
/// class and the order of batches are shuffled with `rng`.
pub fn make_batches(documents: &[EncodedDocument], max_tokens: usize, rng: &mut Rng) -> Result<Vec<Batch>> {
    if let Some(doc) = documents.iter().find(|d| d.len() > max_tokens) {
        return Err(Error::input(format!(
            "document {} has {} tokens, over the batch budget of {max_tokens}",
            doc.id,
            doc.len()
        )));
    }
    let mut order: Vec<usize> = (0..documents.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| documents[i].len());

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for i in order {
        let longest = current.iter().map(|&j| documents[j].len()).max().unwrap_or(0);
        if !current.is_empty() && (current.len() + 1) * longest.max(documents[i].len()) > max_tokens {
            groups.push(std::mem::take(&mut current));
        }
        current.push(i);
    }
    if !current.is_empty() {
        groups.push(current);
    }
    groups.shuffle(rng);

    Ok(groups
        .into_iter()
        .map(|items| {
            let padded_len = items.iter().map(|&i| documents[i].len()).max().unwrap_or(0);
            let pad = |v: &[usize], fill: usize| {
                let mut row = v.to_vec();
                row.resize(padded_len, fill);
                row
            };
            Batch {
                token_ids: items.iter().map(|&i| pad(&documents[i].token_ids, PAD_ID)).collect(),
                segment_ids: items.iter().map(|&i| pad(&documents[i].segment_ids, 0)).collect(),
                pad_mask: items
                    .iter()
                    .map(|&i| (0..padded_len).map(|p| p < documents[i].len()).collect())
                    .collect(),
                items,
                padded_len,
            }
        })
        .collect())
}

/// Where the sentences copied into the gold summary sit in the source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeyPosition {
    /// Distinct positions drawn uniformly per document.
    Uniform,
    /// Starting at a fixed sentence index (clamped so all keys fit).
    Fixed(usize),
    /// The first sentences of the document.
    Lead,
}

/// Knobs for [`synth_corpus`].
///
/// Source words are `w0 .. w{vocab_size-1}`. Each gold sentence copies one
/// key sentence with its last `novel_words` words replaced by words `n*`
/// that never occur in any source, so a single-sentence summary of length
/// `m` has exactly `novel_words / (m - 1)` novel bigrams.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub documents: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub sentence_len: usize,
    pub vocab_size: usize,
    pub key_sentences: usize,
    pub key_position: KeyPosition,
    pub novel_words: usize,
    pub id_prefix: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            documents: 100,
            min_sentences: 5,
            max_sentences: 10,
            sentence_len: 6,
            vocab_size: 200,
            key_sentences: 1,
            key_position: KeyPosition::Uniform,
            novel_words: 0,
            id_prefix: "doc".into(),
        }
    }
}

pub fn synth_corpus(spec: &SynthSpec, rng: &mut Rng) -> Result<Vec<Document>> {
    if spec.documents == 0 || spec.min_sentences == 0 || spec.sentence_len == 0 || spec.vocab_size == 0 {
        return Err(Error::input("synthetic corpus counts must be positive"));
    }
    if spec.max_sentences < spec.min_sentences {
        return Err(Error::input("max_sentences is below min_sentences"));
    }
    if spec.key_sentences > spec.min_sentences {
        return Err(Error::input("more key sentences than sentences per document"));
    }
    if spec.novel_words > spec.sentence_len {
        return Err(Error::input("more novel words than words per sentence"));
    }
    let mut docs = Vec::with_capacity(spec.documents);
    let mut novel_counter = 0usize;
    for d in 0..spec.documents {
        let n = rng.random_range(spec.min_sentences..=spec.max_sentences);
        let mut src: Vec<Vec<String>> = Vec::with_capacity(n);
        while src.len() < n {
            let sentence: Vec<String> = (0..spec.sentence_len)
                .map(|_| format!("w{}", rng.random_range(0..spec.vocab_size)))
                .collect();
            if !src.contains(&sentence) {
                src.push(sentence);
            }
        }
        let k = spec.key_sentences;
        let mut keys: Vec<usize> = match spec.key_position {
            KeyPosition::Uniform => rand::seq::index::sample(rng, n, k).into_vec(),
            KeyPosition::Fixed(j) => {
                let start = j.min(n - k);
                (start..start + k).collect()
            }
            KeyPosition::Lead => (0..k).collect(),
        };
        keys.sort_unstable();
        let tgt = keys
            .iter()
            .map(|&i| {
                let mut s = src[i].clone();
                let len = s.len();
                for w in &mut s[len - spec.novel_words..] {
                    *w = format!("n{novel_counter}");
                    novel_counter += 1;
                }
                s
            })
            .collect();
        docs.push(Document::new(format!("{}{d}", spec.id_prefix), src).with_tgt(tgt));
    }
    Ok(docs)
}
