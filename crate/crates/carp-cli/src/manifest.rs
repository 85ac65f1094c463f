//! Run manifests: every command records its canonicalized configuration,
//! the configuration hash, the seed, and the files it produced.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::config::config_sha256;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value, files: Vec<String>) -> Self {
        let config_sha256 = config_sha256(&config);
        Manifest {
            command: command.to_string(),
            seed,
            config,
            config_sha256,
            files,
        }
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
