pub mod data;
pub mod eval;
pub mod infer;

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::CliResult;
use crate::io;

/// Writes `<output>.manifest` recording the command and its settings.
pub(crate) fn manifest(output: &Path, command: &str, settings: &[(&str, String)]) -> CliResult<()> {
    let map: BTreeMap<String, String> = settings.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    io::write_manifest(&io::manifest_beside(output), command, &map)
}

pub(crate) fn show(path: &Path) -> String {
    std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf()).display().to_string()
}
