// SPDX-License-Identifier: Apache-2.0

use super::matrix::Matrix;
use crate::error::{invalid, Result};

/// Solves the square system `a x = b` by Gaussian elimination with partial
/// pivoting.
pub fn solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(invalid!(
            "solve expects square system, got {:?} and {}",
            a.shape(),
            b.len()
        ));
    }
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = m.max_abs().max(1e-300);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs()))
            .unwrap();
        if m[(pivot, col)].abs() <= 1e-13 * scale {
            return Err(invalid!("singular system (column {col})"));
        }
        if pivot != col {
            for c in 0..n {
                let tmp = m[(col, c)];
                m[(col, c)] = m[(pivot, c)];
                m[(pivot, c)] = tmp;
            }
            x.swap(col, pivot);
        }
        for r in col + 1..n {
            let f = m[(r, col)] / m[(col, col)];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                m[(r, c)] -= f * m[(col, c)];
            }
            x[r] -= f * x[col];
        }
    }
    for r in (0..n).rev() {
        let mut acc = x[r];
        for c in r + 1..n {
            acc -= m[(r, c)] * x[c];
        }
        x[r] = acc / m[(r, r)];
    }
    Ok(x)
}
