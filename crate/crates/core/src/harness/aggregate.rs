// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{RunRecord, RunStatus};
use crate::error::{invalid, Result};

/// Validation NMSE over the seeds of one `(h, T, N)` cell. Only runs with
/// `ok` status contribute; `flagged` marks cells where none did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub h: usize,
    #[serde(rename = "T")]
    pub seq_len: usize,
    #[serde(rename = "N")]
    pub hidden: usize,
    pub min_nmse: Option<f64>,
    pub mean_nmse: Option<f64>,
    /// Sample standard deviation (`n - 1` denominator); 0 for a single run.
    pub std_nmse: Option<f64>,
    pub ok_runs: usize,
    pub total_runs: usize,
    pub flagged: bool,
    /// Parameter count of the cell's model (encoder and feed-forward block).
    pub parameter_count: usize,
}

/// Summaries for every `(h, T, N)` key, sorted by key.
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<CellSummary>> {
    if records.is_empty() {
        return Err(invalid!("no run records to aggregate"));
    }
    let mut groups: BTreeMap<(usize, usize, usize), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.h, r.seq_len, r.hidden)).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|((h, t, n), rs)| {
            let vals: Vec<f64> = rs
                .iter()
                .filter(|r| r.status == RunStatus::Ok)
                .filter_map(|r| r.val_nmse)
                .collect();
            let k = vals.len();
            let (min, mean, std) = if k == 0 {
                (None, None, None)
            } else {
                let mean = vals.iter().sum::<f64>() / k as f64;
                let var = if k > 1 {
                    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64
                } else {
                    0.0
                };
                (
                    Some(vals.iter().copied().fold(f64::INFINITY, f64::min)),
                    Some(mean),
                    Some(var.sqrt()),
                )
            };
            CellSummary {
                h,
                seq_len: t,
                hidden: n,
                min_nmse: min,
                mean_nmse: mean,
                std_nmse: std,
                ok_runs: k,
                total_runs: rs.len(),
                flagged: k == 0,
                parameter_count: rs[0].parameter_count,
            }
        })
        .collect())
}

/// Minimal validation NMSE per `(h, T, N)`; `None` marks a key with no
/// successful run.
pub fn min_over_seeds(records: &[RunRecord]) -> Result<BTreeMap<(usize, usize, usize), Option<f64>>> {
    Ok(aggregate(records)?
        .into_iter()
        .map(|c| ((c.h, c.seq_len, c.hidden), c.min_nmse))
        .collect())
}

/// CSV with columns `h,T,N,min_nmse,mean_nmse,std_nmse`; empty fields for
/// flagged cells.
pub fn write_summary_csv(summaries: &[CellSummary], w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["h", "T", "N", "min_nmse", "mean_nmse", "std_nmse"])?;
    let f = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for c in summaries {
        wtr.write_record([
            c.h.to_string(),
            c.seq_len.to_string(),
            c.hidden.to_string(),
            f(c.min_nmse),
            f(c.mean_nmse),
            f(c.std_nmse),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng;
    use rand::Rng as _;

    fn rec(h: usize, t: usize, n: usize, seed: u64, v: Option<f64>) -> RunRecord {
        RunRecord {
            h,
            seq_len: t,
            hidden: n,
            head_dim: 8,
            seed,
            data_seed: 0,
            parameter_count: 100 + n,
            attention_parameter_count: 0,
            train_nmse: v,
            val_nmse: v,
            epochs_completed: 1,
            epochs: 1,
            batch_size: 1,
            learning_rate: 1e-3,
            wall_seconds: 0.0,
            status: if v.is_some() {
                RunStatus::Ok
            } else {
                RunStatus::Diverged
            },
        }
    }

    #[test]
    fn diverged_seeds_are_excluded() {
        let rs = [
            rec(1, 8, 32, 0, Some(0.02)),
            rec(1, 8, 32, 1, Some(0.01)),
            rec(1, 8, 32, 2, None),
        ];
        let m = min_over_seeds(&rs).unwrap();
        assert_eq!(m[&(1, 8, 32)], Some(0.01));
        let only_bad = [rec(2, 8, 32, 0, None)];
        let s = aggregate(&only_bad).unwrap();
        assert!(s[0].flagged && s[0].min_nmse.is_none());
        assert!(min_over_seeds(&[]).is_err());
    }

    #[test]
    fn single_record_is_itself() {
        let s = aggregate(&[rec(3, 16, 8, 5, Some(0.25))]).unwrap();
        assert_eq!(
            (s[0].min_nmse, s[0].mean_nmse, s[0].std_nmse),
            (Some(0.25), Some(0.25), Some(0.0))
        );
    }

    #[test]
    fn matches_group_by_oracle() {
        let mut r = rng::stream(77, &[]);
        let recs: Vec<RunRecord> = (0..50)
            .map(|k| {
                let v = if r.random::<f64>() < 0.15 {
                    None
                } else {
                    Some(r.random::<f64>())
                };
                rec(1 + r.random_range(0..3), [8, 32][r.random_range(0..2)], 32, k, v)
            })
            .collect();
        let got = aggregate(&recs).unwrap();
        for c in &got {
            let vals: Vec<f64> = recs
                .iter()
                .filter(|x| (x.h, x.seq_len, x.hidden) == (c.h, c.seq_len, c.hidden))
                .filter_map(|x| x.val_nmse)
                .collect();
            let mut sorted = vals.clone();
            sorted.sort_by(f64::total_cmp);
            assert_eq!(c.min_nmse, sorted.first().copied());
            if vals.len() > 1 {
                let n = vals.len() as f64;
                let sum: f64 = vals.iter().sum();
                let sumsq: f64 = vals.iter().map(|v| v * v).sum();
                let var = (sumsq - sum * sum / n) / (n - 1.0);
                assert!((c.mean_nmse.unwrap() - sum / n).abs() < 1e-12);
                assert!((c.std_nmse.unwrap() - var.sqrt()).abs() < 1e-9);
            }
        }
        let keys: usize = got.iter().map(|c| c.total_runs).sum();
        assert_eq!(keys, 50);
    }

    #[test]
    fn summary_csv_layout() {
        let s = aggregate(&[rec(1, 8, 32, 0, Some(0.5)), rec(2, 8, 32, 0, None)]).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "h,T,N,min_nmse,mean_nmse,std_nmse");
        assert_eq!(lines[1], "1,8,32,5e-1,5e-1,0e0");
        assert_eq!(lines[2], "2,8,32,,,");
    }
}
