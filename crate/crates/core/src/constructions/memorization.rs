// SPDX-License-Identifier: Apache-2.0

//! Single-head model with a large embedding.
//!
//! Token `x(t)` is embedded as `x(t) ⊗ e_t` (block `t` of a `T d` vector,
//! zero padded to `n`). With `c0 = 0` and `W_Q = 0` attention is uniform and,
//! with `W_V = W_O = I`, the post-attention vector is `(1/T)` times the
//! concatenated tokens. The feed-forward block is the stack of
//! `F1` (per-token `f_i`, exact for affine `f_i`), `F2` (ReLU max/min over
//! each `S_i`) and `F3` (`F0`, exact for affine `F0`).

use serde::{Deserialize, Serialize};

use super::net::{Affine, ReluNet};
use super::relu_max::{build_relu_max, build_relu_min};
use super::stacking::{stack_networks, StackedNet};
use super::{VerificationReport, Witness};
use crate::error::{invalid, Error, Result};
use crate::numerics::activation::softmax_beta_into;
use crate::numerics::Matrix;
use crate::tasks::{evaluate_target, Extremum, RetrievalTask, Sequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationModel {
    pub task: RetrievalTask,
    pub seq_len: usize,
    /// Embedding (= head) dimension.
    pub embed_dim: usize,
    pub epsilon: f64,
    /// Grid resolution of the max/min nets.
    pub grid: usize,
    pub ffn: StackedNet,
}

/// Builds the model for a task with affine components whose values on
/// `[0,1]^d` stay in `[0,1]`, and affine `F0`.
pub fn build_memorization_model(
    task: &RetrievalTask,
    seq_len: usize,
    epsilon: f64,
    embed_dim: usize,
) -> Result<MemorizationModel> {
    let d = task.input_dim;
    if embed_dim < seq_len * d {
        return Err(Error::Construction(format!(
            "embedding dimension n = {embed_dim} is below T d = {}",
            seq_len * d
        )));
    }
    if let Some(t) = task.seq_len {
        if t != seq_len {
            return Err(invalid!("task has length {t}, model asked for {seq_len}"));
        }
    }
    let tf = seq_len as f64;

    // F1: g_{i,t} = f_i(T p_t), one output per (i, t in S_i).
    let mut rows = Vec::new();
    let mut bias = Vec::new();
    let mut maxers = Vec::new();
    let mut grid = 0;
    for (i, c) in task.components.iter().enumerate() {
        let (w, b) =
            c.f.as_affine(d)
                .ok_or_else(|| invalid!("component {i} is not affine"))?;
        let lo = b + w.iter().map(|v| v.min(0.0)).sum::<f64>();
        let hi = b + w.iter().map(|v| v.max(0.0)).sum::<f64>();
        if lo < 0.0 || hi > 1.0 {
            return Err(Error::Construction(format!(
                "component {i} ranges over [{lo}, {hi}] on the unit cube, outside [0, 1]"
            )));
        }
        let positions = c.index_set.positions(seq_len);
        for &t in &positions {
            let mut row = vec![0.0; embed_dim];
            for (k, wk) in w.iter().enumerate() {
                row[t * d + k] = tf * wk;
            }
            rows.push(row);
            bias.push(b);
        }
        let net = match c.extremum {
            Extremum::Max => build_relu_max(positions.len(), epsilon)?,
            Extremum::Min => build_relu_min(positions.len(), epsilon)?,
        };
        grid = net.grid();
        maxers.push(net.into_net());
    }
    let f1 = ReluNet::affine_as_relu(&Affine::new(Matrix::from_rows(&rows)?, bias)?);
    let f2 = block_diagonal(&maxers)?;
    let (w0, b0) = task.outer.as_affine(task.intrinsic_dim());
    let f3 = ReluNet::affine_as_relu(&Affine::new(Matrix::row_vector(w0), vec![b0])?);
    let ffn = stack_networks(&f1, &f2, &f3)?;
    Ok(MemorizationModel {
        task: task.clone(),
        seq_len,
        embed_dim,
        epsilon,
        grid,
        ffn,
    })
}

/// Runs several nets of equal depth side by side on disjoint input slices.
fn block_diagonal(nets: &[ReluNet]) -> Result<ReluNet> {
    let depth = nets[0].depth();
    let layers = (0..depth)
        .map(|k| {
            let parts: Vec<&Affine> = nets.iter().map(|n| &n.layers()[k]).collect();
            let rows: usize = parts.iter().map(|a| a.out_dim()).sum();
            let cols: usize = parts.iter().map(|a| a.in_dim()).sum();
            let mut w = Matrix::zeros(rows, cols);
            let mut b = Vec::with_capacity(rows);
            let (mut r0, mut c0) = (0, 0);
            for a in parts {
                for r in 0..a.out_dim() {
                    for c in 0..a.in_dim() {
                        w[(r0 + r, c0 + c)] = a.w[(r, c)];
                    }
                }
                b.extend_from_slice(&a.b);
                r0 += a.out_dim();
                c0 += a.in_dim();
            }
            Affine::new(w, b)
        })
        .collect::<Result<Vec<_>>>()?;
    ReluNet::new(layers)
}

impl MemorizationModel {
    pub fn heads(&self) -> usize {
        1
    }

    pub fn check_input(&self, x: &Sequence) -> Result<()> {
        if x.len() != self.seq_len || x.dim() != self.task.input_dim {
            return Err(invalid!(
                "model expects {} tokens of dimension {}, got {} x {}",
                self.seq_len,
                self.task.input_dim,
                x.len(),
                x.dim()
            ));
        }
        Ok(())
    }

    fn embed(&self, x: &Sequence, t: usize) -> Vec<f64> {
        let d = x.dim();
        let mut e = vec![0.0; self.embed_dim];
        e[t * d..(t + 1) * d].copy_from_slice(x.token(t));
        e
    }

    /// Uniform attention over the embedded tokens.
    pub fn post_attention(&self, x: &Sequence) -> Result<Vec<f64>> {
        self.check_input(x)?;
        // W_Q = 0: every score is zero
        let mut p = vec![0.0; x.len()];
        softmax_beta_into(&vec![0.0; x.len()], 1.0, &mut p);
        let mut out = vec![0.0; self.embed_dim];
        for (t, pt) in p.iter().enumerate() {
            for (o, e) in out.iter_mut().zip(self.embed(x, t)) {
                *o += pt * e;
            }
        }
        Ok(out)
    }

    pub fn forward(&self, x: &Sequence) -> Result<f64> {
        let p = self.post_attention(x)?;
        Ok(self.ffn.eval(&p)?[0])
    }

    /// `L ε'` with `ε' = 1/grid` and `L` the sup-norm Lipschitz constant of `F0`.
    pub fn error_bound(&self) -> f64 {
        self.task.outer.lipschitz_l1(self.task.intrinsic_dim()) / self.grid as f64
    }

    /// Checks `|model(x) - F0(z(x))| <= L/grid` on each sequence.
    pub fn verify(&self, sequences: &[Sequence]) -> Result<VerificationReport> {
        let bound = self.error_bound();
        let params = serde_json::json!({
            "task": self.task.id,
            "T": self.seq_len,
            "n": self.embed_dim,
            "epsilon": self.epsilon,
            "grid": self.grid,
        });
        let mut rep = VerificationReport::new("memorization", params, bound);
        for x in sequences {
            let got = self.forward(x)?;
            let want = evaluate_target(&self.task, x)?;
            let err = (got - want).abs();
            // rounding in the merged layers is far below the grid error
            rep.observe(err, err > bound + 1e-12, || Witness::new(x, got, want, got - want, ""));
        }
        Ok(rep)
    }
}
