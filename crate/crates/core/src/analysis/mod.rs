// SPDX-License-Identifier: Apache-2.0

//! Metrics and fits over grid results.

mod report;
mod reversal;
mod scaling;
mod transition;

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use report::{analyze_records, analyze_table, AnalysisReport, ReversalRow};
pub use reversal::{reversal_onset, weighted_reversal_score, ReversalScore};
pub use scaling::{fit_scaling_law, ScalingFit, DELTA_GRID_STEPS, IRLS_ITERATIONS};
pub use transition::{detect_transition, TransitionConfig};

/// Mean squared error divided by the population variance of `targets`.
pub fn nmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(invalid!(
            "nmse: {} predictions for {} targets",
            preds.len(),
            targets.len()
        ));
    }
    if targets.len() < 2 {
        return Err(invalid!("nmse needs at least two targets"));
    }
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    if var <= 0.0 || !var.is_finite() {
        return Err(invalid!("nmse: target variance is {var}"));
    }
    let mse = preds.iter().zip(targets).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n;
    Ok(mse / var)
}

/// Error values keyed by `(h, T)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrTable {
    entries: BTreeMap<(usize, usize), f64>,
}

#[derive(Debug, Deserialize)]
struct ErrRow {
    h: usize,
    #[serde(rename = "T")]
    seq_len: usize,
    err: f64,
}

impl ErrTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut table = Self::new();
        for (h, t, e) in entries {
            table.insert(h, t, e)?;
        }
        Ok(table)
    }

    /// Reads a CSV with columns `h,T,err`.
    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut table = Self::new();
        for row in rdr.deserialize() {
            let row: ErrRow = row?;
            table.insert(row.h, row.seq_len, row.err)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, h: usize, t: usize, err: f64) -> Result<()> {
        if !(err >= 0.0 && err.is_finite()) {
            return Err(invalid!(
                "error value at h={h}, T={t} must be finite and nonnegative, got {err}"
            ));
        }
        if self.entries.insert((h, t), err).is_some() {
            return Err(invalid!("duplicate entry h={h}, T={t}"));
        }
        Ok(())
    }

    pub fn get(&self, h: usize, t: usize) -> Option<f64> {
        self.entries.get(&(h, t)).copied()
    }

    pub fn heads(&self) -> Vec<usize> {
        let mut hs: Vec<usize> = self.entries.keys().map(|k| k.0).collect();
        hs.dedup();
        hs
    }

    pub fn lengths(&self) -> Vec<usize> {
        let mut ts: Vec<usize> = self.entries.keys().map(|k| k.1).collect();
        ts.sort_unstable();
        ts.dedup();
        ts
    }

    /// `(T, err)` pairs for one head count, sorted by `T`.
    pub fn row(&self, h: usize) -> Vec<(usize, f64)> {
        self.entries
            .range((h, 0)..=(h, usize::MAX))
            .map(|(&(_, t), &e)| (t, e))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(h, t), &e)| (h, t, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn without_heads(&self, drop: &[usize]) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| !drop.contains(&k.0))
                .map(|(&k, &v)| (k, v))
                .collect(),
        }
    }
}
