//! Versioned checkpoint container.
//!
//! Layout: the 8-byte magic `BSUMCKPT`, a little-endian `u64` header length,
//! a JSON header (format version, model kind, model config, step,
//! validation loss, optimizer step counters and a table of tensor names,
//! shapes and element offsets), then every tensor's elements as
//! little-endian `f64`, back to back in table order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"BSUMCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Prefix of tensors holding optimizer moments rather than parameters.
const ADAM_PREFIX: &str = "adam.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Extractive,
    Abstractive,
    Pretrain,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Extractive => "extractive",
            ModelKind::Abstractive => "abstractive",
            ModelKind::Pretrain => "pretrain",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: ModelKind,
    config: serde_json::Value,
    step: u64,
    val_loss: Option<f64>,
    optimizers: BTreeMap<String, OptimizerMeta>,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct OptimizerMeta {
    config: AdamConfig,
    step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub step: u64,
    pub val_loss: Option<f64>,
    optimizers: BTreeMap<String, OptimizerMeta>,
    tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(kind: ModelKind, config: serde_json::Value, step: u64, val_loss: Option<f64>) -> Self {
        Self {
            kind,
            config,
            step,
            val_loss,
            optimizers: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Adds every parameter of `store` under its own name.
    pub fn add_params(&mut self, store: &ParamStore) {
        for (_, p) in store.iter() {
            self.tensors.push((p.name.clone(), p.value.clone()));
        }
    }

    /// Overwrites every parameter of `store` from the checkpoint. Each name
    /// must be present exactly once with the same shape, and the checkpoint
    /// may hold no parameter the store lacks.
    pub fn load_params(&self, store: &mut ParamStore) -> Result<()> {
        let mut saved: BTreeMap<&str, &Tensor> = BTreeMap::new();
        for (name, t) in self.tensors.iter().filter(|(n, _)| !n.starts_with(ADAM_PREFIX)) {
            if saved.insert(name, t).is_some() {
                return Err(Error::input(format!("checkpoint holds parameter {name} twice")));
            }
        }
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.name(id).to_string();
            let t = saved
                .remove(name.as_str())
                .ok_or_else(|| Error::input(format!("checkpoint is missing parameter {name}")))?;
            if t.shape() != store.get(id).shape() {
                return Err(Error::input(format!(
                    "parameter {name} has shape {:?} in checkpoint, model expects {:?}",
                    t.shape(),
                    store.get(id).shape()
                )));
            }
            store.replace(id, t.clone());
        }
        if let Some(name) = saved.keys().next() {
            return Err(Error::input(format!("checkpoint holds unknown parameter {name}")));
        }
        Ok(())
    }

    /// Stores the moments of `adam` under `label`.
    pub fn add_optimizer(&mut self, label: &str, adam: &AdamState, store: &ParamStore) {
        self.optimizers.insert(
            label.to_string(),
            OptimizerMeta {
                config: adam.config,
                step: adam.step_count(),
            },
        );
        for (i, &id) in adam.params().iter().enumerate() {
            let name = store.name(id);
            self.tensors
                .push((format!("{ADAM_PREFIX}{label}.m.{name}"), adam.first_moment()[i].clone()));
            self.tensors
                .push((format!("{ADAM_PREFIX}{label}.v.{name}"), adam.second_moment()[i].clone()));
        }
    }

    pub fn has_optimizer(&self, label: &str) -> bool {
        self.optimizers.contains_key(label)
    }

    /// Rebuilds the optimizer saved under `label`, owning `params` of `store`.
    pub fn optimizer(&self, label: &str, params: Vec<crate::numerics::ParamId>, store: &ParamStore) -> Result<AdamState> {
        let meta = self
            .optimizers
            .get(label)
            .ok_or_else(|| Error::input(format!("checkpoint has no optimizer {label}")))?;
        let find = |kind: &str, name: &str| {
            let key = format!("{ADAM_PREFIX}{label}.{kind}.{name}");
            self.tensors
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::input(format!("checkpoint is missing {key}")))
        };
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for &id in &params {
            m.push(find("m", store.name(id))?);
            v.push(find("v", store.name(id))?);
        }
        AdamState::from_parts(meta.config, meta.step, params, m, v)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind,
            config: self.config.clone(),
            step: self.step,
            val_loss: self.val_loss,
            optimizers: self.optimizers.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::input("not a checkpoint file"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let data_start = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::input("checkpoint header is truncated"))?;
        let header: Header = serde_json::from_slice(&bytes[16..data_start])?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::input(format!(
                "checkpoint format version {} is not supported (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        let data = &bytes[data_start..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let (start, end) = (e.offset * 8, (e.offset + n) * 8);
            if end > data.len() {
                return Err(Error::input(format!("checkpoint data for {} is truncated", e.name)));
            }
            let values = data[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((e.name, Tensor::new(&e.shape, values)?));
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            step: header.step,
            val_loss: header.val_loss,
            optimizers: header.optimizers,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Decodes the stored model config.
    pub fn config_as<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.config.clone())?)
    }

    /// Fails unless the checkpoint holds a model of `kind`.
    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::input(format!("checkpoint holds a {} model, expected {kind}", self.kind)));
        }
        Ok(())
    }
}
