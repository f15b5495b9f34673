//! Training loops behind `train-ext`, `train-abs` and `pretrain`.
//!
//! All three share one loop: documents are grouped into length-bucketed
//! batches under a token budget, every document is run forward and backward
//! on its own (pads never enter the computation, so this equals a padded
//! batch), gradients are summed over `accum` batches and averaged over the
//! documents seen, and then one optimizer step is taken. Every
//! `eval_every` optimizer steps the model is scored on the validation split
//! and checkpointed.

use std::path::{Path, PathBuf};

use bertsum::abstractive::{dual_lr, two_stage_init, AbstractiveConfig, BeamConfig, DualSchedule};
use bertsum::checkpoint::{Checkpoint, ModelKind};
use bertsum::corpus::{load_jsonl, make_batches, Document, Strictness};
use bertsum::encoder::EncoderConfig;
use bertsum::extractive::{extractive_lr, greedy_oracle, ExtractiveConfig};
use bertsum::numerics::{AdamConfig, Var};
use bertsum::rng::{Rng, SeedStreams, BATCHING, DROPOUT, INIT, MASKING};
use bertsum::tokenizer::{build_vocab, encode_document, encode_summary, EncodedDocument, Vocab, VocabOptions, PAD_ID};
use bertsum::{AbstractiveModel, AdamState, DualOptimizer, ExtractiveModel, GradBuffer, ParamStore, PretrainModel, Tape};
use serde::Serialize;

use crate::commands::eval::{mean_scores, rouge_triple, Protocol, RougeTriple};
use crate::commands::infer::{abstract_summary, extract_summary};
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::io::{self, new_checkpoint};

#[derive(Clone, Debug)]
pub struct LoopSettings {
    /// Optimizer steps.
    pub steps: u64,
    /// Batches per optimizer step.
    pub accum: u64,
    pub eval_every: u64,
    pub batch_tokens: usize,
    pub keep_top: usize,
}

impl LoopSettings {
    fn from_config(cfg: &Config, default_accum: u64) -> CliResult<Self> {
        let s = Self {
            steps: cfg.get("steps", 500)?,
            accum: cfg.get("accum", default_accum)?,
            eval_every: cfg.get("eval_every", 100)?,
            batch_tokens: cfg.get("batch_tokens", 512)?,
            keep_top: cfg.get("keep_top", 3)?,
        };
        if s.steps == 0 || s.accum == 0 || s.eval_every == 0 || s.keep_top == 0 {
            return Err(CliError::input("steps, accum, eval_every and keep_top must be positive"));
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckpointRecord {
    pub step: u64,
    pub val_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_perplexity: Option<f64>,
    pub file: String,
}

#[derive(Clone, Copy, Debug)]
struct Validation {
    loss: f64,
    perplexity: Option<f64>,
}

/// A model with its optimizer and validation data.
trait Trainer {
    fn store(&self) -> &ParamStore;
    fn loss(&self, tape: &mut Tape<'_>, index: usize, doc: &EncodedDocument, rng: &mut Rng) -> bertsum::Result<Var>;
    fn step(&mut self, grads: &GradBuffer) -> CliResult<()>;
    fn validate(&self) -> CliResult<Validation>;
    fn checkpoint(&self, step: u64, val_loss: f64) -> CliResult<Checkpoint>;
}

#[derive(Clone, Debug, Serialize)]
struct LoopOutcome {
    forward_steps: u64,
    optimizer_steps: u64,
    final_train_loss: f64,
    checkpoints: Vec<CheckpointRecord>,
}

fn diverged(step: u64, what: &str, value: f64) -> CliError {
    CliError::Internal(format!(
        "training diverged at optimizer step {step}: {what} is {value}; lower the learning rate or check the data"
    ))
}

fn run_loop<T: Trainer>(
    trainer: &mut T,
    train: &[EncodedDocument],
    settings: &LoopSettings,
    streams: &SeedStreams,
    out_dir: &Path,
) -> CliResult<LoopOutcome> {
    let mut batching = streams.stream(BATCHING);
    let mut dropout = Some(streams.stream(DROPOUT));
    let mut masking = streams.stream(MASKING);
    let mut grads = GradBuffer::for_store(trainer.store());
    let (mut forward, mut optimizer, mut micro) = (0u64, 0u64, 0u64);
    let (mut docs, mut loss_sum) = (0usize, 0.0);
    let mut last_loss;
    let mut records = Vec::new();
    'outer: loop {
        for batch in make_batches(train, settings.batch_tokens, &mut batching)? {
            for &i in &batch.items {
                let mut tape = Tape::training(trainer.store(), dropout.take().expect("dropout stream"));
                let loss = trainer.loss(&mut tape, i, &train[i], &mut masking)?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(diverged(optimizer + 1, &format!("training loss on {}", train[i].id), value));
                }
                tape.backward(loss)?.accumulate_into(&mut grads)?;
                dropout = tape.into_dropout_rng();
                docs += 1;
                loss_sum += value;
            }
            forward += 1;
            micro += 1;
            if micro < settings.accum {
                continue;
            }
            grads.scale(1.0 / docs as f64);
            trainer.step(&grads)?;
            optimizer += 1;
            last_loss = loss_sum / docs as f64;
            grads.clear();
            (micro, docs, loss_sum) = (0, 0, 0.0);

            if optimizer % settings.eval_every == 0 || optimizer == settings.steps {
                let v = trainer.validate()?;
                if !v.loss.is_finite() {
                    return Err(diverged(optimizer, "validation loss", v.loss));
                }
                let file = format!("step-{optimizer:07}.ckpt");
                trainer.checkpoint(optimizer, v.loss)?.save(&out_dir.join(&file))?;
                eprintln!("step {optimizer}: train loss {last_loss:.5}, validation loss {:.5}", v.loss);
                records.push(CheckpointRecord {
                    step: optimizer,
                    val_loss: v.loss,
                    val_perplexity: v.perplexity,
                    file,
                });
            }
            if optimizer == settings.steps {
                break 'outer;
            }
        }
    }
    Ok(LoopOutcome {
        forward_steps: forward,
        optimizer_steps: optimizer,
        final_train_loss: last_loss,
        checkpoints: records,
    })
}

/// The `keep` checkpoints with the lowest validation loss, ascending; ties
/// go to the earlier step.
pub fn top_checkpoints(records: &[CheckpointRecord], keep: usize) -> Vec<CheckpointRecord> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.val_loss.total_cmp(&b.val_loss).then(a.step.cmp(&b.step)));
    sorted.truncate(keep);
    sorted
}

/// Element-wise mean of the parameters of several checkpoints.
fn average_params(store: &mut ParamStore, checkpoints: &[Checkpoint]) -> CliResult<()> {
    let mut sum: Option<ParamStore> = None;
    for ck in checkpoints {
        let mut s = store.clone();
        ck.load_params(&mut s)?;
        match &mut sum {
            None => sum = Some(s),
            Some(acc) => {
                for id in s.ids().collect::<Vec<_>>() {
                    acc.get_mut(id).add_assign(s.get(id))?;
                }
            }
        }
    }
    let sum = sum.ok_or_else(|| CliError::Internal("no checkpoints to average".into()))?;
    let k = checkpoints.len() as f64;
    for id in sum.ids().collect::<Vec<_>>() {
        store.replace(id, sum.get(id).scale(1.0 / k));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
struct TestReport {
    /// `scores`: mean of the per-checkpoint scores; `weights`: score of the
    /// parameter average.
    averaging: &'static str,
    checkpoints: Vec<String>,
    per_checkpoint: Vec<RougeTriple>,
    rouge: RougeTriple,
}

#[derive(Clone, Debug, Serialize)]
struct Report {
    kind: ModelKind,
    seed: u64,
    #[serde(flatten)]
    outcome: LoopOutcome,
    top: Vec<CheckpointRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<TestReport>,
}

fn adam_config(cfg: &Config) -> CliResult<AdamConfig> {
    let d = AdamConfig::default();
    Ok(AdamConfig {
        beta1: cfg.get("adam_beta1", d.beta1)?,
        beta2: cfg.get("adam_beta2", d.beta2)?,
        eps: cfg.get("adam_eps", d.eps)?,
    })
}

fn encoder_config(cfg: &Config, vocab_size: usize) -> CliResult<EncoderConfig> {
    let d = EncoderConfig::desk(vocab_size);
    Ok(EncoderConfig {
        vocab_size,
        width: cfg.get("width", d.width)?,
        layers: cfg.get("layers", d.layers)?,
        heads: cfg.get("heads", d.heads)?,
        ffn_width: cfg.get("ffn_width", d.ffn_width)?,
        max_pos: cfg.get("max_pos", d.max_pos)?,
        dropout: cfg.get("dropout", d.dropout)?,
    })
}

fn strictness(cfg: &Config) -> CliResult<Strictness> {
    Ok(if cfg.get("lenient", false)? { Strictness::Lenient } else { Strictness::Strict })
}

pub fn load_corpus(path: &Path, strictness: Strictness) -> CliResult<Vec<Document>> {
    let report = load_jsonl(path, strictness).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    for s in &report.skipped {
        eprintln!("{}: skipped line {}: {}", path.display(), s.line, s.reason);
    }
    Ok(report.documents)
}

/// Vocabulary options shared by `build-vocab` and the training commands.
pub fn vocab_from_corpus(docs: &[Document], options: VocabOptions) -> CliResult<Vocab> {
    let sentences = docs.iter().flat_map(|d| d.src.iter().chain(d.summary()).map(Vec::as_slice));
    Ok(build_vocab(sentences, options)?)
}

fn vocab_for_run(cfg: &Config, train: &[Document]) -> CliResult<Vocab> {
    let lowercase = cfg.get("lowercase", true)?;
    match cfg.optional_existing_path("vocab")? {
        Some(path) => Ok(Vocab::load(&path, lowercase)?),
        None => vocab_from_corpus(
            train,
            VocabOptions {
                max_size: cfg.get("vocab_max_size", VocabOptions::default().max_size)?,
                min_freq: cfg.get("vocab_min_freq", 1)?,
                lowercase,
            },
        ),
    }
}

fn ensure_labels(docs: &mut [Document], auto_oracle: bool, max_sents: usize, split: &str) -> CliResult<()> {
    for doc in docs {
        if doc.labels.is_some() {
            continue;
        }
        if !auto_oracle {
            return Err(CliError::input(format!(
                "{split} document {} has no labels; run `bertsum oracle` first or set auto_oracle = true",
                doc.id
            )));
        }
        doc.labels = Some(greedy_oracle(&doc.src, doc.summary(), max_sents)?.labels);
    }
    Ok(())
}

fn encode_all(docs: &[Document], vocab: &Vocab, max_pos: usize) -> CliResult<Vec<EncodedDocument>> {
    docs.iter().map(|d| Ok(encode_document(d, vocab, max_pos)?)).collect()
}

fn nonempty(docs: Vec<Document>, split: &str, path: &Path) -> CliResult<Vec<Document>> {
    if docs.is_empty() {
        return Err(CliError::input(format!("{split} corpus {} is empty", path.display())));
    }
    Ok(docs)
}

fn finish_report(out_dir: &Path, report: &Report) -> CliResult<()> {
    io::write_json(&out_dir.join("report.json"), report)?;
    println!("top checkpoints by validation loss:");
    for r in &report.top {
        println!("  {}  step {}  val_loss {:.6}", r.file, r.step, r.val_loss);
    }
    if let Some(t) = &report.test {
        println!(
            "test ROUGE-1/2/L F1 ({} averaged): {:.4} {:.4} {:.4}",
            t.averaging, t.rouge.rouge1, t.rouge.rouge2, t.rouge.rouge_l
        );
    }
    Ok(())
}

/// Scores the top checkpoints on the test split with `score`, either
/// averaging their scores or scoring their parameter average.
fn test_report<M>(
    model: &M,
    store_mut: fn(&mut M) -> &mut ParamStore,
    top: &[CheckpointRecord],
    out_dir: &Path,
    weight_average: bool,
    averaged: impl FnOnce(&M, u64) -> CliResult<Checkpoint>,
    mut score: impl FnMut(&M) -> CliResult<RougeTriple>,
) -> CliResult<TestReport>
where
    M: Clone,
{
    let cks = top
        .iter()
        .map(|r| Ok(Checkpoint::load(&out_dir.join(&r.file))?))
        .collect::<CliResult<Vec<_>>>()?;
    let names: Vec<String> = top.iter().map(|r| r.file.clone()).collect();
    if weight_average {
        let mut m = model.clone();
        average_params(store_mut(&mut m), &cks)?;
        averaged(&m, top[0].step)?.save(&out_dir.join("averaged.ckpt"))?;
        let s = score(&m)?;
        return Ok(TestReport {
            averaging: "weights",
            checkpoints: names,
            per_checkpoint: vec![s],
            rouge: s,
        });
    }
    let mut per = Vec::new();
    for ck in &cks {
        let mut m = model.clone();
        ck.load_params(store_mut(&mut m))?;
        per.push(score(&m)?);
    }
    Ok(TestReport {
        averaging: "scores",
        checkpoints: names,
        rouge: mean_scores(&per),
        per_checkpoint: per,
    })
}

// ---------------------------------------------------------------- extractive

struct ExtTrainer<'a> {
    model: ExtractiveModel,
    adam: AdamState,
    lr: f64,
    warmup: u64,
    val: Vec<EncodedDocument>,
    vocab: &'a Vocab,
}

impl Trainer for ExtTrainer<'_> {
    fn store(&self) -> &ParamStore {
        &self.model.store
    }

    fn loss(&self, tape: &mut Tape<'_>, _: usize, doc: &EncodedDocument, _: &mut Rng) -> bertsum::Result<Var> {
        self.model.loss(tape, doc)
    }

    fn step(&mut self, grads: &GradBuffer) -> CliResult<()> {
        let lr = extractive_lr(self.adam.step_count() + 1, self.warmup, self.lr)?;
        Ok(self.adam.step(&mut self.model.store, grads, lr)?)
    }

    fn validate(&self) -> CliResult<Validation> {
        let mut total = 0.0;
        for doc in &self.val {
            let mut tape = Tape::with_params(&self.model.store);
            let l = self.model.loss(&mut tape, doc)?;
            total += tape.value(l).item();
        }
        Ok(Validation {
            loss: total / self.val.len() as f64,
            perplexity: None,
        })
    }

    fn checkpoint(&self, step: u64, val_loss: f64) -> CliResult<Checkpoint> {
        let mut ck = new_checkpoint(ModelKind::Extractive, &self.model.config, self.vocab, step, Some(val_loss))?;
        ck.add_params(&self.model.store);
        ck.add_optimizer("adam", &self.adam, &self.model.store);
        Ok(ck)
    }
}

pub fn train_extractive(cfg: &Config) -> CliResult<PathBuf> {
    let seed: u64 = cfg.require("seed")?;
    let streams = SeedStreams::new(seed);
    let strict = strictness(cfg)?;
    let train_path = cfg.existing_path("train")?;
    let valid_path = cfg.existing_path("valid")?;
    let test_path = cfg.optional_existing_path("test")?;
    let out_dir = cfg.output_dir("out_dir")?;
    let settings = LoopSettings::from_config(cfg, 2)?;
    let auto_oracle = cfg.get("auto_oracle", false)?;
    let oracle_max = cfg.get("oracle_max_sentences", 3usize)?;
    let select_k = cfg.get("select_k", 3usize)?;
    let block = cfg.get("block_trigrams", true)?;
    let weight_average = cfg.get("weight_average", false)?;
    let lr = cfg.rate("lr", 2e-3)?;
    let warmup = cfg.get("warmup", 10_000u64)?;
    let adam = adam_config(cfg)?;

    let mut train = nonempty(load_corpus(&train_path, strict)?, "training", &train_path)?;
    let mut valid = nonempty(load_corpus(&valid_path, strict)?, "validation", &valid_path)?;
    let test = test_path.as_ref().map(|p| load_corpus(p, strict)).transpose()?;
    ensure_labels(&mut train, auto_oracle, oracle_max, "training")?;
    ensure_labels(&mut valid, auto_oracle, oracle_max, "validation")?;
    let vocab = vocab_for_run(cfg, &train)?;
    let config = ExtractiveConfig {
        encoder: encoder_config(cfg, vocab.len())?,
        inter_layers: cfg.get("inter_layers", 2usize)?,
        pos_weight: cfg.get("pos_weight", 1.0)?,
    };
    cfg.finish()?;
    io::write_manifest(&out_dir.join("manifest.txt"), "train-ext", &cfg.resolved())?;
    vocab.save(&out_dir.join("vocab.txt"))?;

    let max_pos = config.encoder.max_pos;
    let train_enc = encode_all(&train, &vocab, max_pos)?;
    let model = ExtractiveModel::new(config, &mut streams.stream(INIT))?;
    let ids: Vec<_> = model.store.ids().collect();
    let mut trainer = ExtTrainer {
        adam: AdamState::new(adam, ids, &model.store),
        model,
        lr,
        warmup,
        val: encode_all(&valid, &vocab, max_pos)?,
        vocab: &vocab,
    };
    let outcome = run_loop(&mut trainer, &train_enc, &settings, &streams, &out_dir)?;
    let top = top_checkpoints(&outcome.checkpoints, settings.keep_top);

    let test = match &test {
        Some(docs) if !docs.is_empty() => Some(test_report(
            &trainer.model,
            |m| &mut m.store,
            &top,
            &out_dir,
            weight_average,
            |m, step| {
                let mut ck = new_checkpoint(ModelKind::Extractive, &m.config, &vocab, step, None)?;
                ck.add_params(&m.store);
                Ok(ck)
            },
            |m| {
                let scores = docs
                    .iter()
                    .map(|d| {
                        let (_, words) = extract_summary(m, &vocab, d, select_k, block)?;
                        Ok(rouge_triple(&words, &bertsum::metrics::flatten_words(d.summary()), Protocol::F1))
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                Ok(mean_scores(&scores))
            },
        )?),
        _ => None,
    };
    finish_report(
        &out_dir,
        &Report {
            kind: ModelKind::Extractive,
            seed,
            outcome,
            top,
            test,
        },
    )?;
    Ok(out_dir)
}

// --------------------------------------------------------------- abstractive

struct AbsTrainer<'a> {
    model: AbstractiveModel,
    optimizer: DualOptimizer,
    targets: Vec<Vec<usize>>,
    val: Vec<(EncodedDocument, Vec<usize>)>,
    vocab: &'a Vocab,
}

impl Trainer for AbsTrainer<'_> {
    fn store(&self) -> &ParamStore {
        &self.model.store
    }

    fn loss(&self, tape: &mut Tape<'_>, index: usize, doc: &EncodedDocument, _: &mut Rng) -> bertsum::Result<Var> {
        self.model.loss(tape, doc, &self.targets[index])
    }

    fn step(&mut self, grads: &GradBuffer) -> CliResult<()> {
        self.optimizer.step(&mut self.model.store, grads)?;
        Ok(())
    }

    /// Label-smoothed loss per document, plus perplexity of the unsmoothed
    /// token-level cross-entropy.
    fn validate(&self) -> CliResult<Validation> {
        let (mut loss, mut nll, mut tokens) = (0.0, 0.0, 0usize);
        for (src, tgt) in &self.val {
            let mut tape = Tape::with_params(&self.model.store);
            let logits = self.model.logits(&mut tape, src, tgt)?;
            let gold = &tgt[1..];
            let smoothed = bertsum::abstractive::label_smoothed_nll(
                &mut tape,
                logits,
                gold,
                self.model.config.label_smoothing,
                PAD_ID,
            )?;
            let plain = bertsum::abstractive::label_smoothed_nll(&mut tape, logits, gold, 0.0, PAD_ID)?;
            let n = gold.iter().filter(|&&t| t != PAD_ID).count();
            loss += tape.value(smoothed).item();
            nll += tape.value(plain).item() * n as f64;
            tokens += n;
        }
        Ok(Validation {
            loss: loss / self.val.len() as f64,
            perplexity: Some((nll / tokens as f64).exp()),
        })
    }

    fn checkpoint(&self, step: u64, val_loss: f64) -> CliResult<Checkpoint> {
        let mut ck = new_checkpoint(ModelKind::Abstractive, &self.model.config, self.vocab, step, Some(val_loss))?;
        ck.add_params(&self.model.store);
        ck.add_optimizer("encoder", &self.optimizer.encoder, &self.model.store);
        ck.add_optimizer("decoder", &self.optimizer.decoder, &self.model.store);
        Ok(ck)
    }
}

/// Encoder parameters and config of an extractive or pretraining checkpoint.
fn encoder_source(path: &Path) -> CliResult<(ParamStore, EncoderConfig, Vocab)> {
    match io::checkpoint_kind(path)? {
        ModelKind::Extractive => {
            let (m, v, _) = io::load_extractive(path)?;
            Ok((m.store, m.config.encoder, v))
        }
        ModelKind::Pretrain => {
            let (m, v, _) = io::load_pretrain(path)?;
            Ok((m.store, m.encoder.config, v))
        }
        ModelKind::Abstractive => Err(CliError::input(format!(
            "{}: init_from needs an extractive or pretraining checkpoint, found an abstractive one",
            path.display()
        ))),
    }
}

pub fn train_abstractive(cfg: &Config) -> CliResult<PathBuf> {
    let seed: u64 = cfg.require("seed")?;
    let streams = SeedStreams::new(seed);
    let strict = strictness(cfg)?;
    let train_path = cfg.existing_path("train")?;
    let valid_path = cfg.existing_path("valid")?;
    let test_path = cfg.optional_existing_path("test")?;
    let init_from = cfg.optional_existing_path("init_from")?;
    let out_dir = cfg.output_dir("out_dir")?;
    let settings = LoopSettings::from_config(cfg, 5)?;
    let weight_average = cfg.get("weight_average", false)?;
    let tgt_max_len = cfg.get("tgt_max_len", 64usize)?;
    let d = DualSchedule::default();
    let schedule = DualSchedule {
        encoder_lr: cfg.rate("enc_lr", d.encoder_lr)?,
        encoder_warmup: cfg.get("enc_warmup", d.encoder_warmup)?,
        decoder_lr: cfg.rate("dec_lr", d.decoder_lr)?,
        decoder_warmup: cfg.get("dec_warmup", d.decoder_warmup)?,
    };
    dual_lr(1, &schedule)?;
    let freeze_encoder = cfg.get("freeze_encoder", false)?;
    let b = BeamConfig::default();
    let beam = BeamConfig {
        beam: cfg.get("beam", b.beam)?,
        alpha: cfg.get("alpha", b.alpha)?,
        max_len: cfg.get("max_len", b.max_len)?,
        min_len: cfg.get("min_len", b.min_len)?,
        block_trigrams: cfg.get("block_trigrams", b.block_trigrams)?,
    };
    let adam = adam_config(cfg)?;

    let train = nonempty(load_corpus(&train_path, strict)?, "training", &train_path)?;
    let valid = nonempty(load_corpus(&valid_path, strict)?, "validation", &valid_path)?;
    let test = test_path.as_ref().map(|p| load_corpus(p, strict)).transpose()?;
    let source = init_from.as_deref().map(encoder_source).transpose()?;
    let vocab = match &source {
        Some((_, _, v)) => {
            if let Some(p) = cfg.optional_existing_path("vocab")? {
                if Vocab::load(&p, v.lowercase)? != *v {
                    return Err(CliError::input("vocab differs from the vocabulary of the init_from checkpoint"));
                }
            }
            v.clone()
        }
        None => vocab_for_run(cfg, &train)?,
    };
    let base = AbstractiveConfig::desk(vocab.len());
    let config = AbstractiveConfig {
        encoder: encoder_config(cfg, vocab.len())?,
        decoder_layers: cfg.get("decoder_layers", base.decoder_layers)?,
        decoder_ffn_width: cfg.get("decoder_ffn_width", base.decoder_ffn_width)?,
        decoder_dropout: cfg.get("decoder_dropout", base.decoder_dropout)?,
        label_smoothing: cfg.get("label_smoothing", base.label_smoothing)?,
        share_embeddings: cfg.get("share_embeddings", base.share_embeddings)?,
    };
    cfg.finish()?;
    io::write_manifest(&out_dir.join("manifest.txt"), "train-abs", &cfg.resolved())?;
    vocab.save(&out_dir.join("vocab.txt"))?;

    let mut decoder_rng = streams.indexed(INIT, 1);
    let model = match &source {
        Some((store, enc, _)) => two_stage_init(store, enc, config, &mut decoder_rng)?,
        None => AbstractiveModel::new(config, &mut streams.stream(INIT), &mut decoder_rng)?,
    };
    let max_pos = model.config.encoder.max_pos;
    let targets = |docs: &[Document]| -> CliResult<Vec<Vec<usize>>> {
        docs.iter()
            .map(|d| {
                if d.summary().iter().all(Vec::is_empty) {
                    return Err(CliError::input(format!("document {} has no gold summary", d.id)));
                }
                Ok(encode_summary(d.summary(), &vocab, tgt_max_len)?)
            })
            .collect()
    };
    let train_enc = encode_all(&train, &vocab, max_pos)?;
    let mut optimizer = DualOptimizer::new(&model.store, schedule, adam)?;
    optimizer.freeze_encoder = freeze_encoder;
    let mut trainer = AbsTrainer {
        targets: targets(&train)?,
        val: encode_all(&valid, &vocab, max_pos)?.into_iter().zip(targets(&valid)?).collect(),
        model,
        optimizer,
        vocab: &vocab,
    };
    let outcome = run_loop(&mut trainer, &train_enc, &settings, &streams, &out_dir)?;
    let top = top_checkpoints(&outcome.checkpoints, settings.keep_top);

    let test = match &test {
        Some(docs) if !docs.is_empty() => Some(test_report(
            &trainer.model,
            |m| &mut m.store,
            &top,
            &out_dir,
            weight_average,
            |m, step| {
                let mut ck = new_checkpoint(ModelKind::Abstractive, &m.config, &vocab, step, None)?;
                ck.add_params(&m.store);
                Ok(ck)
            },
            |m| {
                let scores = docs
                    .iter()
                    .map(|d| {
                        let (text, _) = abstract_summary(m, &vocab, d, &beam)?;
                        let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
                        Ok(rouge_triple(&words, &bertsum::metrics::flatten_words(d.summary()), Protocol::F1))
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                Ok(mean_scores(&scores))
            },
        )?),
        _ => None,
    };
    finish_report(
        &out_dir,
        &Report {
            kind: ModelKind::Abstractive,
            seed,
            outcome,
            top,
            test,
        },
    )?;
    Ok(out_dir)
}

// ------------------------------------------------------------ masked-LM

struct PretrainTrainer<'a> {
    model: PretrainModel,
    adam: AdamState,
    lr: f64,
    warmup: u64,
    mask_prob: f64,
    val: Vec<EncodedDocument>,
    /// Fixed masks for validation so losses are comparable across steps.
    val_masking: Rng,
    vocab: &'a Vocab,
}

impl Trainer for PretrainTrainer<'_> {
    fn store(&self) -> &ParamStore {
        &self.model.store
    }

    fn loss(&self, tape: &mut Tape<'_>, _: usize, doc: &EncodedDocument, rng: &mut Rng) -> bertsum::Result<Var> {
        self.model.masked_lm_loss(tape, &[doc], self.mask_prob, rng)
    }

    fn step(&mut self, grads: &GradBuffer) -> CliResult<()> {
        let lr = extractive_lr(self.adam.step_count() + 1, self.warmup, self.lr)?;
        Ok(self.adam.step(&mut self.model.store, grads, lr)?)
    }

    fn validate(&self) -> CliResult<Validation> {
        let docs: Vec<&EncodedDocument> = self.val.iter().collect();
        let mut tape = Tape::with_params(&self.model.store);
        let l = self
            .model
            .masked_lm_loss(&mut tape, &docs, self.mask_prob, &mut self.val_masking.clone())?;
        let loss = tape.value(l).item();
        Ok(Validation {
            loss,
            perplexity: Some(loss.exp()),
        })
    }

    fn checkpoint(&self, step: u64, val_loss: f64) -> CliResult<Checkpoint> {
        let mut ck = new_checkpoint(ModelKind::Pretrain, &self.model.encoder.config, self.vocab, step, Some(val_loss))?;
        ck.add_params(&self.model.store);
        ck.add_optimizer("adam", &self.adam, &self.model.store);
        Ok(ck)
    }
}

pub fn pretrain(cfg: &Config) -> CliResult<PathBuf> {
    let seed: u64 = cfg.require("seed")?;
    let streams = SeedStreams::new(seed);
    let strict = strictness(cfg)?;
    let train_path = cfg.existing_path("train")?;
    let valid_path = cfg.existing_path("valid")?;
    let out_dir = cfg.output_dir("out_dir")?;
    let settings = LoopSettings::from_config(cfg, 1)?;
    let lr = cfg.rate("lr", 1e-3)?;
    let warmup = cfg.get("warmup", 10_000u64)?;
    let mask_prob = cfg.get("mask_prob", 0.15)?;
    let adam = adam_config(cfg)?;

    let train = nonempty(load_corpus(&train_path, strict)?, "training", &train_path)?;
    let valid = nonempty(load_corpus(&valid_path, strict)?, "validation", &valid_path)?;
    let vocab = vocab_for_run(cfg, &train)?;
    let config = encoder_config(cfg, vocab.len())?;
    cfg.finish()?;
    io::write_manifest(&out_dir.join("manifest.txt"), "pretrain", &cfg.resolved())?;
    vocab.save(&out_dir.join("vocab.txt"))?;

    let max_pos = config.max_pos;
    let train_enc = encode_all(&train, &vocab, max_pos)?;
    let model = PretrainModel::new(config, &mut streams.stream(INIT))?;
    let ids: Vec<_> = model.store.ids().collect();
    let mut trainer = PretrainTrainer {
        adam: AdamState::new(adam, ids, &model.store),
        model,
        lr,
        warmup,
        mask_prob,
        val: encode_all(&valid, &vocab, max_pos)?,
        val_masking: streams.indexed(MASKING, 1),
        vocab: &vocab,
    };
    let outcome = run_loop(&mut trainer, &train_enc, &settings, &streams, &out_dir)?;
    let top = top_checkpoints(&outcome.checkpoints, settings.keep_top);
    finish_report(
        &out_dir,
        &Report {
            kind: ModelKind::Pretrain,
            seed,
            outcome,
            top,
            test: None,
        },
    )?;
    Ok(out_dir)
}
