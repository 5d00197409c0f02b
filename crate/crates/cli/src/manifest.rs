// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("HEADCOUNT_GIT_VERSION");

/// Provenance written next to every output. No timestamps, so an identical
/// rerun writes an identical file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub config: Option<String>,
    /// SHA-256 of the effective configuration (file plus overrides).
    pub config_sha256: String,
    pub overrides: Vec<String>,
    pub seeds: Vec<u64>,
    pub effective: serde_json::Value,
}

impl Manifest {
    pub fn new(
        command: &str,
        config: Option<&Path>,
        effective_text: &str,
        overrides: &[String],
        seeds: Vec<u64>,
        effective: serde_json::Value,
    ) -> Self {
        Self {
            version: VERSION.to_string(),
            command: command.to_string(),
            config: config.map(|p| p.display().to_string()),
            config_sha256: sha256_hex(effective_text.as_bytes()),
            overrides: overrides.to_vec(),
            seeds,
            effective,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    /// Refuses to mix outputs of two different configurations in one
    /// directory.
    pub fn check_compatible(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let Ok(text) = fs::read_to_string(&path) else {
            return Ok(());
        };
        let old: Manifest = serde_json::from_str(&text).with_context(|| format!("reading {}", path.display()))?;
        if old.config_sha256 != self.config_sha256 {
            bail!(
                "{} was produced by a different configuration (sha256 {}); pick a new experiment_id or output directory",
                dir.display(),
                old.config_sha256
            );
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
