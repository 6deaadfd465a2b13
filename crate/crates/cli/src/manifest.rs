//! Run manifest and file hashing.

use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::Outcome;
use crate::config::ExperimentConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct OutputFile {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl OutputFile {
    pub fn write(dir: &Path, name: &str, contents: &[u8]) -> std::io::Result<OutputFile> {
        std::fs::write(dir.join(name), contents)?;
        Ok(OutputFile { path: name.to_string(), sha256: sha256_hex(contents), bytes: contents.len() as u64 })
    }
}

/// Everything needed to rerun an experiment. Timestamps live only here, so reports stay byte-stable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_path: String,
    pub config_sha256: String,
    /// Config after defaults and the seed override.
    pub effective_config: ExperimentConfig,
    pub seed: u64,
    pub jobs: usize,
    pub started_unix_ms: u128,
    pub duration_ms: u128,
    pub outputs: Vec<OutputFile>,
    pub outcome: Outcome,
    pub exit_code: i32,
    pub message: Option<String>,
}
