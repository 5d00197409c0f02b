// SPDX-License-Identifier: Apache-2.0

//! Order-statistic features of one coordinate and the smooth selector that
//! recovers the coordinate from them.
//!
//! With `m = T/4`, `v` is the `m`-th largest and `w` the `m`-th smallest
//! value. `Y_t = min(x_t, v)` and `1 - Z_t = max(x_t, w)`. Tokens above `v`
//! are read from `1 - Z`, tokens below `w` from `Y`, and in between both
//! agree with `x_t`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::Matrix;
use crate::tasks::Sequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderStats {
    pub m: usize,
    /// `m`-th largest.
    pub v: f64,
    /// `m`-th smallest.
    pub w: f64,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// `max(x_t, w)`, i.e. `1 - Z_t` without the rounding of `1 - (1 - .)`.
    pub upper: Vec<f64>,
}

pub fn order_statistic_features(x: &Sequence, j: usize) -> Result<OrderStats> {
    let t = x.len();
    if !t.is_multiple_of(4) {
        return Err(invalid!("order statistics need 4 | T, got T = {t}"));
    }
    if j >= x.dim() {
        return Err(invalid!("coordinate {j} out of range for dimension {}", x.dim()));
    }
    let m = t / 4;
    let col: Vec<f64> = (0..t).map(|s| x.token(s)[j]).collect();
    let mut sorted = col.clone();
    sorted.sort_by(f64::total_cmp);
    let w = sorted[m - 1];
    let v = sorted[t - m];
    Ok(OrderStats {
        m,
        v,
        w,
        y: col.iter().map(|&c| c.min(v)).collect(),
        z: col.iter().map(|&c| 1.0 - c.max(w)).collect(),
        upper: col.iter().map(|&c| c.max(w)).collect(),
    })
}

/// `x̂_q(t)_j = (e^{q d_Z²} (1-Z) + e^{q d_Y²} Y) / (e^{q d_Z²} + e^{q d_Y²})`
/// with `d_Z = 1 - Z - w` and `d_Y = Y - v`, evaluated with the larger
/// exponent factored out.
pub fn smooth_selector(x: &Sequence, q: f64) -> Result<Sequence> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(invalid!("selector sharpness must be positive, got {q}"));
    }
    let (t, d) = (x.len(), x.dim());
    let mut out = Matrix::zeros(t, d);
    for j in 0..d {
        let os = order_statistic_features(x, j)?;
        for s in 0..t {
            let hi = os.upper[s];
            let lo = os.y[s];
            let a = q * (hi - os.w).powi(2);
            let b = q * (lo - os.v).powi(2);
            let top = a.max(b);
            let (ea, eb) = ((a - top).exp(), (b - top).exp());
            // offset from the heavier side so a vanishing weight leaves it exact
            let span = hi - lo;
            out[(s, j)] = if ea >= eb {
                hi - eb / (ea + eb) * span
            } else {
                lo + ea / (ea + eb) * span
            };
        }
    }
    Sequence::new(out)
}
