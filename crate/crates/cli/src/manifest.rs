//! Run manifests: everything needed to reproduce a command's outputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::EngineConfig;
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub tool_version: &'a str,
    pub core_version: &'a str,
    pub surrogate_format: u32,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub config: &'a EngineConfig,
    /// Command-line overrides as given.
    pub overrides: BTreeMap<&'a str, String>,
    /// SHA-256 of each output file.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Writes `manifest_<command>.json` into the output directory, hashing the
/// listed output files.
pub fn write(
    cfg: &EngineConfig,
    command: &str,
    seeds: Vec<u64>,
    overrides: BTreeMap<&str, String>,
    outputs: &[&str],
) -> Result<(), CliError> {
    let mut hashes = BTreeMap::new();
    for name in outputs {
        hashes.insert(name.to_string(), sha256_file(&cfg.output.join(name))?);
    }
    let m = Manifest {
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        core_version: pdml_core::VERSION,
        surrogate_format: pdml_core::surrogate::FORMAT_VERSION,
        config_hash: cfg.hash(),
        seeds,
        config: cfg,
        overrides,
        outputs: hashes,
    };
    let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::write(cfg.output.join(format!("manifest_{command}.json")), text + "\n")?;
    Ok(())
}
