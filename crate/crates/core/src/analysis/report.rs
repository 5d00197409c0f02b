// SPDX-License-Identifier: Apache-2.0

use std::fs::{self, File};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    detect_transition, fit_scaling_law, reversal_onset, weighted_reversal_score, ErrTable, ScalingFit, TransitionConfig,
};
use crate::error::{invalid, Result};
use crate::harness::{aggregate, CellSummary, RunRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReversalRow {
    pub h: usize,
    pub score: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    /// Hidden width the tables are taken at.
    #[serde(rename = "N")]
    pub hidden: usize,
    pub transition: Option<usize>,
    pub transition_config: TransitionConfig,
    pub reversal: Vec<ReversalRow>,
    pub reversal_onset: Option<usize>,
    pub fit: Option<ScalingFit>,
    /// Why the scaling fit was skipped, if it was.
    pub fit_error: Option<String>,
    pub cells: Vec<CellSummary>,
}

/// Min-over-seeds table at width `hidden` (or the widest width present),
/// followed by transition detection, reversal scores and the scaling fit.
pub fn analyze_records(
    records: &[RunRecord],
    hidden: Option<usize>,
    drop: &[usize],
    config: TransitionConfig,
    reversal_threshold: f64,
) -> Result<AnalysisReport> {
    let cells = aggregate(records)?;
    let n = match hidden {
        Some(n) => n,
        None => cells.iter().map(|c| c.hidden).max().expect("aggregate is nonempty"),
    };
    let at_n: Vec<CellSummary> = cells.into_iter().filter(|c| c.hidden == n).collect();
    if at_n.is_empty() {
        return Err(invalid!("no records at N={n}"));
    }
    let table = ErrTable::from_entries(at_n.iter().filter_map(|c| c.min_nmse.map(|e| (c.h, c.seq_len, e))))?;
    let mut report = analyze_table(&table, n, drop, config, reversal_threshold)?;
    report.cells = at_n;
    Ok(report)
}

/// Transition detection, reversal scores and the scaling fit on one error
/// table. `hidden` is recorded as given; `cells` is left empty.
pub fn analyze_table(
    table: &ErrTable,
    hidden: usize,
    drop: &[usize],
    config: TransitionConfig,
    reversal_threshold: f64,
) -> Result<AnalysisReport> {
    let transition = if table.heads().len() >= 3 {
        detect_transition(table, config).ok().flatten()
    } else {
        None
    };
    let mut reversal = Vec::new();
    for h in table.heads() {
        let row = table.row(h);
        if row.len() >= 2 {
            let r = weighted_reversal_score(&row)?;
            reversal.push(ReversalRow {
                h,
                score: r.score,
                degenerate: r.degenerate,
            });
        }
    }
    let onset = reversal_onset(table, reversal_threshold)?;
    let (fit, fit_error) = match fit_scaling_law(table, drop) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(AnalysisReport {
        hidden,
        transition,
        transition_config: config,
        reversal,
        reversal_onset: onset,
        fit,
        fit_error,
        cells: Vec::new(),
    })
}

impl AnalysisReport {
    /// Writes `report.json` and the plot tables `nmse_vs_h.csv`,
    /// `log_n_vs_log_nmse.csv` and `reversal_vs_h.csv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        serde_json::to_writer_pretty(File::create(dir.join("report.json"))?, self)?;

        let mut w = csv::Writer::from_path(dir.join("nmse_vs_h.csv"))?;
        w.write_record(["h", "T", "N", "min_nmse", "mean_nmse"])?;
        for c in &self.cells {
            w.write_record([
                c.h.to_string(),
                c.seq_len.to_string(),
                c.hidden.to_string(),
                opt(c.min_nmse),
                opt(c.mean_nmse),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("log_n_vs_log_nmse.csv"))?;
        w.write_record(["h", "T", "N", "parameter_count", "log_parameter_count", "log_min_nmse"])?;
        for c in &self.cells {
            w.write_record([
                c.h.to_string(),
                c.seq_len.to_string(),
                c.hidden.to_string(),
                c.parameter_count.to_string(),
                format!("{:e}", (c.parameter_count as f64).ln()),
                opt(c.min_nmse.filter(|v| *v > 0.0).map(f64::ln)),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("reversal_vs_h.csv"))?;
        w.write_record(["h", "reversal_score", "degenerate"])?;
        for r in &self.reversal {
            w.write_record([r.h.to_string(), format!("{:e}", r.score), r.degenerate.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}
