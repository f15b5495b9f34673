//! Files the commands exchange: checkpoints with their vocabulary,
//! summary JSONL and run manifests.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use bertsum::abstractive::AbstractiveConfig;
use bertsum::checkpoint::{Checkpoint, ModelKind};
use bertsum::encoder::EncoderConfig;
use bertsum::extractive::ExtractiveConfig;
use bertsum::rng::{SeedStreams, INIT};
use bertsum::tokenizer::Vocab;
use bertsum::{AbstractiveModel, ExtractiveModel, PretrainModel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::error::{CliError, CliResult};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// What a checkpoint header stores besides tensors: the model config and the
/// vocabulary the model was trained with.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelMeta<C> {
    pub model: C,
    pub vocab: Vec<String>,
    pub lowercase: bool,
}

pub fn new_checkpoint<C: Serialize>(
    kind: ModelKind,
    model: &C,
    vocab: &Vocab,
    step: u64,
    val_loss: Option<f64>,
) -> CliResult<Checkpoint> {
    let meta = ModelMeta {
        model,
        vocab: vocab.tokens().to_vec(),
        lowercase: vocab.lowercase,
    };
    Ok(Checkpoint::new(kind, serde_json::to_value(meta)?, step, val_loss))
}

fn open<C: DeserializeOwned>(path: &Path, kind: ModelKind) -> CliResult<(Checkpoint, C, Vocab)> {
    let ck = Checkpoint::load(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    ck.expect_kind(kind)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let meta: ModelMeta<C> = ck.config_as()?;
    let vocab = Vocab::from_tokens(meta.vocab, meta.lowercase)?;
    Ok((ck, meta.model, vocab))
}

/// Init streams are irrelevant when every parameter is overwritten.
fn scratch() -> bertsum::rng::Rng {
    SeedStreams::new(0).stream(INIT)
}

pub fn load_extractive(path: &Path) -> CliResult<(ExtractiveModel, Vocab, Checkpoint)> {
    let (ck, config, vocab) = open::<ExtractiveConfig>(path, ModelKind::Extractive)?;
    let mut model = ExtractiveModel::new(config, &mut scratch())?;
    ck.load_params(&mut model.store)?;
    Ok((model, vocab, ck))
}

pub fn load_abstractive(path: &Path) -> CliResult<(AbstractiveModel, Vocab, Checkpoint)> {
    let (ck, config, vocab) = open::<AbstractiveConfig>(path, ModelKind::Abstractive)?;
    let mut model = AbstractiveModel::new(config, &mut scratch(), &mut scratch())?;
    ck.load_params(&mut model.store)?;
    Ok((model, vocab, ck))
}

pub fn load_pretrain(path: &Path) -> CliResult<(PretrainModel, Vocab, Checkpoint)> {
    let (ck, config, vocab) = open::<EncoderConfig>(path, ModelKind::Pretrain)?;
    let mut model = PretrainModel::new(config, &mut scratch())?;
    ck.load_params(&mut model.store)?;
    Ok((model, vocab, ck))
}

/// Kind stored in a checkpoint file, without building the model.
pub fn checkpoint_kind(path: &Path) -> CliResult<ModelKind> {
    Ok(Checkpoint::load(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
        .kind)
}

/// One line of `select` or `decode` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub id: String,
    pub summary: String,
    /// Selected sentence indices, for extractive output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<usize>>,
    /// Length-penalized beam score, for abstractive output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

pub fn read_summaries(path: &Path) -> CliResult<Vec<SummaryRecord>> {
    let file = fs::File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SummaryRecord = serde_json::from_str(&line)
            .map_err(|e| CliError::input(format!("{}: line {}: {e}", path.display(), n + 1)))?;
        if !ids.insert(rec.id.clone()) {
            return Err(CliError::input(format!("{}: line {}: duplicate id {}", path.display(), n + 1, rec.id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    let mut out = BufWriter::new(fs::File::create(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Writes the manifest of a run: the command, the code version and every
/// resolved setting, in config syntax.
pub fn write_manifest(path: &Path, command: &str, settings: &BTreeMap<String, String>) -> CliResult<()> {
    let mut entries = settings.clone();
    entries.insert("command".into(), command.into());
    entries.insert("code_version".into(), CODE_VERSION.into());
    fs::write(path, config::render(&entries)).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// `<output>.manifest` next to a single output file.
pub fn manifest_beside(output: &Path) -> std::path::PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest");
    name.into()
}
