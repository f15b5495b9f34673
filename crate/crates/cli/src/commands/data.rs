//! `build-vocab`, `stats` and `oracle`.

use std::path::Path;

use bertsum::corpus::{save_jsonl, Strictness};
use bertsum::extractive::greedy_oracle;
use bertsum::metrics::corpus_stats;
use bertsum::tokenizer::VocabOptions;

use super::{manifest, show};
use crate::error::{CliError, CliResult};
use crate::io;
use crate::train::{load_corpus, vocab_from_corpus};

pub fn build_vocab(input: &Path, output: &Path, options: VocabOptions, strictness: Strictness) -> CliResult<()> {
    let docs = load_corpus(input, strictness)?;
    let vocab = vocab_from_corpus(&docs, options)?;
    vocab.save(output)?;
    println!("{} tokens written to {}", vocab.len(), output.display());
    manifest(
        output,
        "build-vocab",
        &[
            ("input", show(input)),
            ("max_size", options.max_size.to_string()),
            ("min_freq", options.min_freq.to_string()),
            ("lowercase", options.lowercase.to_string()),
        ],
    )
}

pub fn stats(input: &Path, output: &Path, strictness: Strictness) -> CliResult<()> {
    let docs = load_corpus(input, strictness)?;
    let s = corpus_stats(&docs)?;
    io::write_json(output, &s)?;
    println!("documents            {}", s.documents);
    println!("avg doc words        {:.2}", s.avg_doc_words);
    println!("avg doc sentences    {:.2}", s.avg_doc_sentences);
    println!("summaries            {}", s.summaries);
    println!("avg summary words    {:.2}", s.avg_summary_words);
    println!("avg summary sents    {:.2}", s.avg_summary_sentences);
    println!("novel bigrams        {:.4}", s.novel_bigram_proportion);
    manifest(output, "stats", &[("input", show(input))])
}

pub fn oracle(input: &Path, output: &Path, max_sentences: usize, strictness: Strictness) -> CliResult<()> {
    if max_sentences == 0 {
        return Err(CliError::input("--max-sentences must be at least 1"));
    }
    let mut docs = load_corpus(input, strictness)?;
    for doc in &mut docs {
        if doc.summary().iter().all(Vec::is_empty) {
            return Err(CliError::input(format!("document {} has no gold summary", doc.id)));
        }
        doc.labels = Some(greedy_oracle(&doc.src, doc.summary(), max_sentences)?.labels);
    }
    save_jsonl(output, &docs)?;
    println!("labeled {} documents", docs.len());
    manifest(
        output,
        "oracle",
        &[("input", show(input)), ("max_sentences", max_sentences.to_string())],
    )
}
