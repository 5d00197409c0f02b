// SPDX-License-Identifier: Apache-2.0

//! Three-layer ReLU network for `max_t x_t` on `[0,1]^T`.
//!
//! With `n = ceil(1/eps)`:
//! `h1(t,j) = ReLU(x_t - j/n)`, `a_j = ReLU(sum_t h1(t,j))`,
//! `b_j = ReLU(sum_t h1(t,j) - 1/n)`, output `sum_j (a_j - b_j)`.
//! Each `a_j - b_j = min(sum_t h1(t,j), 1/n)` is `1/n` when `max x >= (j+1)/n`
//! and lies in `(0, 1/n]` on the cell containing the max, so the output
//! overshoots the max by less than `1/n`.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{Affine, ReluNet};
use super::{VerificationReport, Witness};
use crate::error::{invalid, Error, Result};
use crate::numerics::{rng, Matrix};
use crate::tasks::{Extremum, Sequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReluMaxNet {
    seq_len: usize,
    n: usize,
    mode: Extremum,
    net: ReluNet,
}

fn grid_size(epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(invalid!("epsilon must lie in (0, 1], got {epsilon}"));
    }
    Ok((1.0 / epsilon).ceil() as usize)
}

fn build(seq_len: usize, n: usize, mode: Extremum) -> Result<ReluMaxNet> {
    if seq_len == 0 {
        return Err(invalid!("max over an empty sequence"));
    }
    let nf = n as f64;
    // min x = 1 - max(1 - x): flip the inputs in layer 1 and the output in layer 3.
    let (s, shift) = match mode {
        Extremum::Max => (1.0, 0.0),
        Extremum::Min => (-1.0, 1.0),
    };
    let w1 = Matrix::from_fn(seq_len * n, seq_len, |r, c| if r / n == c { s } else { 0.0 });
    let b1 = (0..seq_len * n).map(|r| shift - (r % n) as f64 / nf).collect();
    let w2 = Matrix::from_fn(2 * n, seq_len * n, |r, c| if c % n == r % n { 1.0 } else { 0.0 });
    let b2 = (0..2 * n).map(|r| if r < n { 0.0 } else { -1.0 / nf }).collect();
    let w3 = Matrix::from_fn(1, 2 * n, |_, c| if c < n { s } else { -s });
    let net = ReluNet::new(vec![
        Affine::new(w1, b1)?,
        Affine::new(w2, b2)?,
        Affine::new(w3, vec![shift])?,
    ])?;
    let out = ReluMaxNet { seq_len, n, mode, net };
    out.check_invariants()?;
    Ok(out)
}

/// Network approximating `max_t x_t` within `1/ceil(1/eps)` on `[0,1]^T`.
pub fn build_relu_max(seq_len: usize, epsilon: f64) -> Result<ReluMaxNet> {
    build(seq_len, grid_size(epsilon)?, Extremum::Max)
}

/// Network approximating `min_t x_t` as `1 - max_t (1 - x_t)`; same widths.
pub fn build_relu_min(seq_len: usize, epsilon: f64) -> Result<ReluMaxNet> {
    build(seq_len, grid_size(epsilon)?, Extremum::Min)
}

impl ReluMaxNet {
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Grid resolution `n`.
    pub fn grid(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> Extremum {
        self.mode
    }

    pub fn net(&self) -> &ReluNet {
        &self.net
    }

    pub fn into_net(self) -> ReluNet {
        self.net
    }

    /// `(layer-1 width, layer-2 width)`.
    pub fn widths(&self) -> (usize, usize) {
        let w = self.net.hidden_widths();
        (w[0], w[1])
    }

    /// Weights in `{-1, 0, 1}` and biases on the grid `{i/n}`.
    pub fn check_invariants(&self) -> Result<()> {
        let nf = self.n as f64;
        for (k, layer) in self.net.layers().iter().enumerate() {
            if let Some(w) = layer.w.as_slice().iter().find(|w| ![-1.0, 0.0, 1.0].contains(*w)) {
                return Err(Error::Construction(format!(
                    "layer {k} weight {w} is not in {{-1, 0, 1}}"
                )));
            }
            for b in &layer.b {
                let scaled = b * nf;
                if (scaled - scaled.round()).abs() > 1e-9 * nf {
                    return Err(Error::Construction(format!(
                        "layer {k} bias {b} is off the 1/{} grid",
                        self.n
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.net.eval(x)?[0])
    }

    fn exact(&self, x: &[f64]) -> f64 {
        let fold = x.iter().copied();
        match self.mode {
            Extremum::Max => fold.fold(f64::NEG_INFINITY, f64::max),
            Extremum::Min => fold.fold(f64::INFINITY, f64::min),
        }
    }

    /// Checks `|f(x) - max x| <= 1/n` on every corner of `[0,1]^T` (when
    /// `T <= 16`) and on `samples` uniform points drawn from `seed`.
    pub fn verify(&self, samples: usize, seed: u64) -> VerificationReport {
        const SHARDS: usize = 16;
        let bound = 1.0 / self.n as f64;
        let params = serde_json::json!({
            "T": self.seq_len,
            "n": self.n,
            "mode": self.mode,
            "samples": samples,
            "seed": seed,
        });
        let name = match self.mode {
            Extremum::Max => "relu_max",
            Extremum::Min => "relu_min",
        };
        let fresh = || VerificationReport::new(name, params.clone(), bound);
        let check = |rep: &mut VerificationReport, x: &[f64]| {
            let got = self.net.eval_unchecked(x)[0];
            let want = self.exact(x);
            let dev = got - want;
            rep.observe(dev.abs(), dev.abs() > bound, || {
                Witness::new(&Sequence::from_scalars(x).expect("finite"), got, want, dev, "")
            });
        };

        let mut report = fresh();
        if self.seq_len <= 16 {
            let mut x = vec![0.0; self.seq_len];
            for mask in 0u32..(1 << self.seq_len) {
                for (t, v) in x.iter_mut().enumerate() {
                    *v = f64::from((mask >> t) & 1);
                }
                check(&mut report, &x);
            }
        }
        let per = samples.div_ceil(SHARDS);
        (0..SHARDS)
            .into_par_iter()
            .map(|shard| {
                let mut r = rng::stream(seed, &[shard as u64]);
                let mut rep = fresh();
                let mut x = vec![0.0; self.seq_len];
                for _ in 0..per.min(samples.saturating_sub(shard * per)) {
                    x.iter_mut().for_each(|v| *v = r.random::<f64>());
                    check(&mut rep, &x);
                }
                rep
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(report, |a, b| a.merge(b))
    }
}
