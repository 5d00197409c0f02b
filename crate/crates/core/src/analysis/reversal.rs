// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::ErrTable;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReversalScore {
    pub score: f64,
    /// Set when all errors are equal (`w_h = 0`); `score` is then 0.
    pub degenerate: bool,
}

/// `R = (1/w_h) * sum_{T1 < T2} max(err(T1) - err(T2), 0)` with
/// `w_h = max err - min err`.
///
/// ```
/// use headcount_core::analysis::weighted_reversal_score;
///
/// let r = weighted_reversal_score(&[(8, 0.3), (16, 0.1), (32, 0.2)]).unwrap();
/// assert!((r.score - 1.5).abs() < 1e-12);
/// ```
pub fn weighted_reversal_score(err_by_t: &[(usize, f64)]) -> Result<ReversalScore> {
    if err_by_t.len() < 2 {
        return Err(invalid!("reversal score needs at least two lengths"));
    }
    let mut rows = err_by_t.to_vec();
    rows.sort_by_key(|r| r.0);
    if rows.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(invalid!("duplicate sequence length in reversal input"));
    }
    if rows.iter().any(|r| !r.1.is_finite()) {
        return Err(invalid!("reversal input contains a non-finite error"));
    }
    let hi = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let w = hi - lo;
    if w <= 0.0 {
        return Ok(ReversalScore {
            score: 0.0,
            degenerate: true,
        });
    }
    let mut total = 0.0;
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            total += (a.1 - b.1).max(0.0);
        }
    }
    Ok(ReversalScore {
        score: total / w,
        degenerate: false,
    })
}

/// Smallest head count whose reversal score exceeds `threshold`.
pub fn reversal_onset(table: &ErrTable, threshold: f64) -> Result<Option<usize>> {
    for h in table.heads() {
        let row = table.row(h);
        if row.len() < 2 {
            continue;
        }
        if weighted_reversal_score(&row)?.score > threshold {
            return Ok(Some(h));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn monotone_increasing_is_zero() {
        let r = weighted_reversal_score(&[(8, 0.1), (16, 0.2), (32, 0.25), (64, 0.4)]).unwrap();
        assert_eq!(r.score, 0.0);
        assert!(!r.degenerate);
    }

    #[test]
    fn flat_is_flagged() {
        let r = weighted_reversal_score(&[(8, 0.2), (16, 0.2)]).unwrap();
        assert_eq!(
            r,
            ReversalScore {
                score: 0.0,
                degenerate: true
            }
        );
    }

    #[test]
    fn input_order_does_not_matter() {
        let a = weighted_reversal_score(&[(32, 0.2), (8, 0.3), (16, 0.1)]).unwrap();
        assert!((a.score - 1.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_short_and_duplicate() {
        assert!(weighted_reversal_score(&[(8, 0.1)]).is_err());
        assert!(weighted_reversal_score(&[(8, 0.1), (8, 0.2)]).is_err());
    }

    fn pair_loop(errs: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..errs.len() {
            for j in 0..errs.len() {
                if i < j && errs[i] > errs[j] {
                    s += errs[i] - errs[j];
                }
            }
        }
        let hi = errs.iter().cloned().fold(f64::MIN, f64::max);
        let lo = errs.iter().cloned().fold(f64::MAX, f64::min);
        s / (hi - lo)
    }

    proptest! {
        #[test]
        fn matches_pair_enumeration(errs in prop::collection::vec(0.0f64..1.0, 5)) {
            let lo = errs.iter().cloned().fold(f64::MAX, f64::min);
            let hi = errs.iter().cloned().fold(f64::MIN, f64::max);
            prop_assume!(hi - lo > 1e-9);
            let rows: Vec<(usize, f64)> = errs.iter().enumerate().map(|(k, &e)| (8 << k, e)).collect();
            let r = weighted_reversal_score(&rows).unwrap();
            let oracle = pair_loop(&errs);
            prop_assert!((r.score - oracle).abs() <= 1e-12 * oracle.max(1.0));
            prop_assert!(r.score >= 0.0 && r.score <= 10.0);
            let sorted = errs.windows(2).all(|w| w[0] <= w[1]);
            prop_assert_eq!(r.score == 0.0, sorted);
        }
    }
}
