//! Command surface of the `bertsum` binary.
//!
//! [`run`] parses arguments and dispatches; it returns the process exit code
//! (0 success, 1 input error, 2 internal error) so commands can be driven
//! in-process by tests.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod train;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use bertsum::abstractive::BeamConfig;
use bertsum::corpus::Strictness;
use bertsum::tokenizer::VocabOptions;
use clap::{Args, Parser, Subcommand};

use commands::eval::Protocol;
use commands::infer::Selector;
use config::Config;
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "bertsum", version, about = "Extractive and abstractive summarization with a sentence-aware encoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Corpus {
    /// Skip malformed JSONL lines instead of failing.
    #[arg(long)]
    lenient: bool,
}

impl Corpus {
    fn strictness(&self) -> Strictness {
        if self.lenient {
            Strictness::Lenient
        } else {
            Strictness::Strict
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a WordPiece vocabulary from a corpus.
    BuildVocab {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = VocabOptions::default().max_size)]
        max_size: usize,
        #[arg(long, default_value_t = 1)]
        min_freq: usize,
        /// Keep case instead of lowercasing.
        #[arg(long)]
        cased: bool,
        #[command(flatten)]
        corpus: Corpus,
    },
    /// Corpus length and novelty statistics as JSON.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        corpus: Corpus,
    },
    /// Add greedy oracle labels to every document.
    Oracle {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 3)]
        max_sentences: usize,
        #[command(flatten)]
        corpus: Corpus,
    },
    /// Train the extractive model.
    TrainExt {
        #[command(flatten)]
        run: RunArgs,
        /// Score the parameter average of the top checkpoints instead of
        /// averaging their scores.
        #[arg(long)]
        weight_average: bool,
    },
    /// Train the abstractive model.
    TrainAbs {
        #[command(flatten)]
        run: RunArgs,
        /// Extractive or pretraining checkpoint to take the encoder from.
        #[arg(long)]
        init_from: Option<PathBuf>,
        #[arg(long)]
        weight_average: bool,
    },
    /// Masked-LM pretraining of the encoder.
    Pretrain {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Extractive summaries: model selection or the lead baseline.
    Select {
        #[arg(long, required_unless_present = "lead", conflicts_with = "lead")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Sentences per summary.
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Take the first K sentences instead of using a model.
        #[arg(long, value_name = "K")]
        lead: Option<usize>,
        #[arg(long)]
        no_block_trigrams: bool,
        #[command(flatten)]
        corpus: Corpus,
    },
    /// Abstractive summaries by beam search.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = BeamConfig::default().beam)]
        beam: usize,
        #[arg(long, default_value_t = BeamConfig::default().alpha)]
        alpha: f64,
        #[arg(long, default_value_t = BeamConfig::default().max_len)]
        max_len: usize,
        #[arg(long, default_value_t = BeamConfig::default().min_len)]
        min_len: usize,
        #[arg(long)]
        no_block_trigrams: bool,
        #[command(flatten)]
        corpus: Corpus,
    },
    /// Score summaries against the gold summaries of a corpus.
    Rouge {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, value_enum, default_value_t = Protocol::F1)]
        protocol: Protocol,
        /// JSON report.
        #[arg(long)]
        output: PathBuf,
        /// Also write the plain-text table here.
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        corpus: Corpus,
    },
    /// Plot-ready CSV analyses.
    #[command(subcommand)]
    Analyze(Analysis),
}

#[derive(Debug, Subcommand)]
enum Analysis {
    /// Histogram of selected sentence positions (`bucket,proportion`).
    Positions {
        #[arg(long)]
        corpus: PathBuf,
        /// `select` output; defaults to the corpus oracle labels.
        #[arg(long)]
        selections: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        buckets: usize,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        lenient: bool,
    },
    /// Proportion of novel summary n-grams (`n,proportion`).
    Novel {
        #[arg(long)]
        corpus: PathBuf,
        /// `select` or `decode` output; defaults to the gold summaries.
        #[arg(long)]
        summaries: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        max_n: usize,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        lenient: bool,
    },
}

fn run_config(run: &RunArgs, extra: &[(&str, Option<String>)]) -> CliResult<Config> {
    let mut cfg = match &run.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    for s in &run.set {
        cfg.set(s)?;
    }
    for (key, value) in extra {
        if let Some(v) = value {
            cfg.set(&format!("{key}={v}"))?;
        }
    }
    Ok(cfg)
}

fn lenient(flag: bool) -> Strictness {
    if flag {
        Strictness::Lenient
    } else {
        Strictness::Strict
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::BuildVocab {
            input,
            output,
            max_size,
            min_freq,
            cased,
            corpus,
        } => commands::data::build_vocab(
            &input,
            &output,
            VocabOptions {
                max_size,
                min_freq,
                lowercase: !cased,
            },
            corpus.strictness(),
        ),
        Command::Stats { input, output, corpus } => commands::data::stats(&input, &output, corpus.strictness()),
        Command::Oracle {
            input,
            output,
            max_sentences,
            corpus,
        } => commands::data::oracle(&input, &output, max_sentences, corpus.strictness()),
        Command::TrainExt { run, weight_average } => {
            let cfg = run_config(&run, &[("weight_average", weight_average.then(|| "true".into()))])?;
            train::train_extractive(&cfg).map(drop)
        }
        Command::TrainAbs {
            run,
            init_from,
            weight_average,
        } => {
            let cfg = run_config(
                &run,
                &[
                    ("init_from", init_from.as_deref().map(path_str)),
                    ("weight_average", weight_average.then(|| "true".into())),
                ],
            )?;
            train::train_abstractive(&cfg).map(drop)
        }
        Command::Pretrain { run } => train::pretrain(&run_config(&run, &[])?).map(drop),
        Command::Select {
            checkpoint,
            input,
            output,
            k,
            lead,
            no_block_trigrams,
            corpus,
        } => {
            let (selector, k) = match (lead, &checkpoint) {
                (Some(n), _) => (Selector::Lead, n),
                (None, Some(c)) => (
                    Selector::Model {
                        checkpoint: c,
                        block_trigrams: !no_block_trigrams,
                    },
                    k,
                ),
                (None, None) => return Err(CliError::input("select needs --checkpoint or --lead")),
            };
            commands::infer::select(selector, &input, &output, k, corpus.strictness())
        }
        Command::Decode {
            checkpoint,
            input,
            output,
            beam,
            alpha,
            max_len,
            min_len,
            no_block_trigrams,
            corpus,
        } => commands::infer::decode(
            &checkpoint,
            &input,
            &output,
            BeamConfig {
                beam,
                alpha,
                max_len,
                min_len,
                block_trigrams: !no_block_trigrams,
            },
            corpus.strictness(),
        ),
        Command::Rouge {
            hyp,
            reference,
            protocol,
            output,
            table,
            corpus,
        } => commands::eval::rouge_cmd(&hyp, &reference, protocol, &output, table.as_deref(), corpus.strictness()),
        Command::Analyze(Analysis::Positions {
            corpus,
            selections,
            buckets,
            output,
            lenient: l,
        }) => commands::eval::analyze_positions(&corpus, selections.as_deref(), buckets, &output, lenient(l)),
        Command::Analyze(Analysis::Novel {
            corpus,
            summaries,
            max_n,
            output,
            lenient: l,
        }) => commands::eval::analyze_novel(&corpus, summaries.as_deref(), max_n, &output, lenient(l)),
    }
}

/// Parses `args` (program name first), runs the command and returns its exit
/// code. Usage errors print the usage and return 1 before any file is
/// touched.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
