//! Flat `key = value` run configuration.
//!
//! One assignment per line; blank lines and lines starting with `#` are
//! ignored. `--set key=value` flags override the file. Every key a command
//! reads is recorded together with the value it resolved to (defaults
//! included), and that record is what the run manifest stores, so a
//! manifest is itself a complete config for rerunning.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, CliResult};

/// Keys written into manifests that commands do not read.
const MANIFEST_KEYS: [&str; 2] = ["command", "code_version"];

#[derive(Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
    resolved: RefCell<BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut config = Config::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = split_assignment(line).map_err(|e| CliError::input(format!("line {}: {e}", n + 1)))?;
            if config.values.insert(key.clone(), value).is_some() {
                return Err(CliError::input(format!("line {}: key {key} is set twice", n + 1)));
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, assignment: &str) -> CliResult<()> {
        let (key, value) = split_assignment(assignment).map_err(CliError::input)?;
        self.values.insert(key, value);
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse_value<T: FromStr>(key: &str, raw: &str) -> CliResult<T>
    where
        T::Err: Display,
    {
        raw.parse().map_err(|e| CliError::input(format!("config key {key}: cannot parse {raw:?}: {e}")))
    }

    fn record(&self, key: &str, value: String) {
        self.resolved.borrow_mut().insert(key.to_string(), value);
    }

    pub fn get<T: FromStr + Display>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        let value = match self.raw(key) {
            Some(raw) => Self::parse_value(key, raw)?,
            None => default,
        };
        self.record(key, value.to_string());
        Ok(value)
    }

    /// A learning rate: finite and positive.
    pub fn rate(&self, key: &str, default: f64) -> CliResult<f64> {
        let value = self.get(key, default)?;
        if !(value.is_finite() && value > 0.0) {
            return Err(CliError::input(format!("config key {key} must be a finite positive number, got {value}")));
        }
        Ok(value)
    }

    pub fn require<T: FromStr + Display>(&self, key: &str) -> CliResult<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(key).ok_or_else(|| CliError::input(format!("config key {key} is required")))?;
        let value: T = Self::parse_value(key, raw)?;
        self.record(key, value.to_string());
        Ok(value)
    }

    pub fn optional<T: FromStr + Display>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        if self.raw(key).is_some() {
            self.require(key).map(Some)
        } else {
            Ok(None)
        }
    }

    /// A file that must exist; recorded as an absolute path.
    pub fn existing_path(&self, key: &str) -> CliResult<PathBuf> {
        let raw: String = self.require(key)?;
        self.resolve_existing(key, &raw)
    }

    pub fn optional_existing_path(&self, key: &str) -> CliResult<Option<PathBuf>> {
        match self.raw(key) {
            Some(raw) => {
                let raw = raw.to_string();
                self.resolve_existing(key, &raw).map(Some)
            }
            None => Ok(None),
        }
    }

    fn resolve_existing(&self, key: &str, raw: &str) -> CliResult<PathBuf> {
        let path = fs::canonicalize(raw).map_err(|e| CliError::input(format!("config key {key}: {raw}: {e}")))?;
        self.record(key, path.display().to_string());
        Ok(path)
    }

    /// An output directory, created if missing; recorded as an absolute path.
    pub fn output_dir(&self, key: &str) -> CliResult<PathBuf> {
        let raw: String = self.require(key)?;
        fs::create_dir_all(&raw).map_err(|e| CliError::input(format!("config key {key}: {raw}: {e}")))?;
        self.resolve_existing(key, &raw)
    }

    /// Fails on any key the command never read.
    pub fn finish(&self) -> CliResult<()> {
        let resolved = self.resolved.borrow();
        let unknown: Vec<&str> = self
            .values
            .keys()
            .map(String::as_str)
            .filter(|k| !resolved.contains_key(*k) && !MANIFEST_KEYS.contains(k))
            .collect();
        if !unknown.is_empty() {
            return Err(CliError::input(format!("unknown config keys: {}", unknown.join(", "))));
        }
        Ok(())
    }

    /// Every key read so far with its resolved value.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        self.resolved.borrow().clone()
    }
}

fn split_assignment(line: &str) -> Result<(String, String), String> {
    let (key, value) = line
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got {line:?}"))?;
    let key = key.trim();
    if key.is_empty() || key.contains(char::is_whitespace) {
        return Err(format!("invalid key {key:?}"));
    }
    Ok((key.to_string(), value.trim().to_string()))
}

/// Renders `entries` in the config syntax.
pub fn render(entries: &BTreeMap<String, String>) -> String {
    entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
