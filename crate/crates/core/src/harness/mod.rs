// SPDX-License-Identifier: Apache-2.0

//! The `(h, T, N, seed)` training grid: config, resumable runner, and
//! per-cell aggregation over seeds.

mod aggregate;
mod grid;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LrSchedule, ModelConfig, TrainConfig};
use crate::numerics::AdamConfig;

pub use crate::model::{RunRecord, RunStatus};
pub use aggregate::{aggregate, min_over_seeds, write_summary_csv, CellSummary};
pub use grid::{read_results, run_grid, GridProgress};

/// The experiment grid. Every list must be nonempty and every count positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub experiment_id: String,
    pub heads: Vec<usize>,
    pub lengths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n_train: usize,
    pub n_val: usize,
    /// Seed for the target directions and the sampled sequences.
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default = "default_head_dim")]
    pub head_dim: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub schedule: LrSchedule,
    /// Worker threads; 0 lets the pool decide.
    #[serde(default)]
    pub threads: usize,
}

fn default_head_dim() -> usize {
    8
}

fn default_beta() -> f64 {
    1.0
}

impl GridSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::with_overrides(text, &[])
    }

    /// Parses `text`, then applies `key=value` overrides. Values are read as
    /// TOML (`heads=[1,2]`, `epochs=5`) and fall back to plain strings.
    pub fn with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
            let key = key.trim();
            let raw = raw.trim();
            let value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key.to_string(), value);
        }
        let spec: GridSpec = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("{e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("heads", self.heads.is_empty()),
            ("lengths", self.lengths.is_empty()),
            ("seeds", self.seeds.is_empty()),
            ("hidden", self.hidden.is_empty()),
        ];
        if let Some((name, _)) = lists.iter().find(|(_, empty)| *empty) {
            return Err(Error::Config(format!("{name} must be nonempty")));
        }
        if self.heads.contains(&0) || self.lengths.contains(&0) || self.hidden.contains(&0) {
            return Err(Error::Config(
                "heads, lengths and hidden widths must be positive".into(),
            ));
        }
        let counts = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("n_train", self.n_train),
            ("n_val", self.n_val),
            ("head_dim", self.head_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("beta must be positive".into()));
        }
        Ok(())
    }

    /// Cells in `(T, h, N, seed)` order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &t in &self.lengths {
            for &h in &self.heads {
                for &n in &self.hidden {
                    for &seed in &self.seeds {
                        out.push(CellKey {
                            h,
                            seq_len: t,
                            hidden: n,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn model_config(&self, cell: &CellKey, input_dim: usize) -> ModelConfig {
        ModelConfig {
            heads: cell.h,
            head_dim: self.head_dim,
            hidden: cell.hidden,
            input_dim,
            seq_len: cell.seq_len,
            beta: self.beta,
        }
    }

    pub fn train_config(&self, cell: &CellKey) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: cell.seed,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            schedule: self.schedule,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub h: usize,
    pub seq_len: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl CellKey {
    pub fn of(r: &RunRecord) -> Self {
        Self {
            h: r.h,
            seq_len: r.seq_len,
            hidden: r.hidden,
            seed: r.seed,
        }
    }
}
