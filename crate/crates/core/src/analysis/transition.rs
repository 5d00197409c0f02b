// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::ErrTable;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionConfig {
    /// Required ratio `err(h-1, T) / err(h, T)` at every shared `T`.
    pub drop_factor: f64,
    /// Bound on `err(T2) / err(T1)` over all `T1 < T2` in row `h`.
    pub growth_ratio: f64,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        Self {
            drop_factor: 10.0,
            growth_ratio: 3.0,
        }
    }
}

/// Smallest `h` whose errors sit at least `drop_factor` below row `h-1` at
/// every length and do not grow with `T` by more than `growth_ratio`.
///
/// A zero error counts as an infinite drop and never as growth from zero
/// unless a later error is positive.
pub fn detect_transition(table: &ErrTable, config: TransitionConfig) -> Result<Option<usize>> {
    let heads = table.heads();
    let longest_run = heads
        .windows(2)
        .fold((1usize, 1usize), |(best, cur), w| {
            let cur = if w[1] == w[0] + 1 { cur + 1 } else { 1 };
            (best.max(cur), cur)
        })
        .0;
    if heads.len() < 3 || longest_run < 3 {
        return Err(invalid!(
            "transition detection needs at least 3 consecutive head counts"
        ));
    }
    for &h in &heads[1..] {
        let prev = table.row(h - 1);
        let row = table.row(h);
        if prev.is_empty() || row.is_empty() {
            continue;
        }
        let shared: Vec<(f64, f64)> = row
            .iter()
            .filter_map(|&(t, e)| table.get(h - 1, t).map(|p| (p, e)))
            .collect();
        if shared.is_empty() {
            continue;
        }
        let drops = shared.iter().all(|&(p, e)| p >= config.drop_factor * e);
        let flat = row.iter().enumerate().all(|(i, &(_, e1))| {
            row[i + 1..]
                .iter()
                .all(|&(_, e2)| e2 <= config.growth_ratio * e1 || (e1 == 0.0 && e2 == 0.0))
        });
        if drops && flat {
            return Ok(Some(h));
        }
    }
    Ok(None)
}
