// SPDX-License-Identifier: Apache-2.0

//! Batched forward pass and hand-fused backward pass used for training.
//!
//! Scores are computed as `x̂(t) · u_i` with `u_i = W_Kiᵀ W_Qi c0`, which is
//! the same bilinear form as the per-token path in `params` but needs one
//! product per head instead of one per token.

use super::params::TransformerParams;
use crate::error::{invalid, Result};
use crate::numerics::activation::{gelu, gelu_grad, softmax_beta_into, softmax_beta_vjp};
use crate::numerics::matrix::{axpy_slice, dot, Matrix, Trans};
use crate::tasks::Sequence;

/// Reusable buffers for one batch size.
#[derive(Debug, Clone)]
pub struct BatchWorkspace {
    batch: usize,
    seq_len: usize,
    x: Matrix,
    pre1: Matrix,
    h1: Matrix,
    xh: Matrix,
    q: Matrix,
    u: Matrix,
    s: Matrix,
    p: Matrix,
    xb: Vec<Matrix>,
    head: Matrix,
    c: Matrix,
    z: Matrix,
    gpre: Matrix,
    g: Matrix,
    yhat: Vec<f64>,
    d_gpre: Matrix,
    dz: Matrix,
    dc: Matrix,
    dhead: Matrix,
    dxb: Matrix,
    dxh: Matrix,
    ds: Matrix,
    du: Matrix,
    dh1: Matrix,
    dp: Vec<f64>,
    dsc: Vec<f64>,
}

impl BatchWorkspace {
    pub fn new(params: &TransformerParams, batch: usize) -> Self {
        let c = params.config;
        let (t, d, n, e, h, hd) = (c.seq_len, c.input_dim, c.hidden, c.embed_dim(), c.heads, c.head_dim);
        let bt = batch * t;
        Self {
            batch,
            seq_len: t,
            x: Matrix::zeros(bt, d),
            pre1: Matrix::zeros(bt, n),
            h1: Matrix::zeros(bt, n),
            xh: Matrix::zeros(bt, e),
            q: Matrix::zeros(h, hd),
            u: Matrix::zeros(h, e),
            s: Matrix::zeros(bt, h),
            p: Matrix::zeros(batch * h, t),
            xb: vec![Matrix::zeros(batch, e); h],
            head: Matrix::zeros(batch, hd),
            c: Matrix::zeros(batch, e),
            z: Matrix::zeros(batch, e),
            gpre: Matrix::zeros(batch, n),
            g: Matrix::zeros(batch, n),
            yhat: vec![0.0; batch],
            d_gpre: Matrix::zeros(batch, n),
            dz: Matrix::zeros(batch, e),
            dc: Matrix::zeros(batch, e),
            dhead: Matrix::zeros(batch, hd),
            dxb: Matrix::zeros(batch, e),
            dxh: Matrix::zeros(bt, e),
            ds: Matrix::zeros(bt, h),
            du: Matrix::zeros(h, e),
            dh1: Matrix::zeros(bt, n),
            dp: vec![0.0; t],
            dsc: vec![0.0; t],
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Predictions from the most recent forward pass.
    pub fn predictions(&self) -> &[f64] {
        &self.yhat
    }

    /// Attention weights of sample `b`, head `i` from the most recent pass.
    pub fn attention(&self, b: usize, i: usize, heads: usize) -> &[f64] {
        self.p.row(b * heads + i)
    }

    fn load(&mut self, params: &TransformerParams, inputs: &[&Sequence]) -> Result<()> {
        if inputs.len() != self.batch {
            return Err(invalid!("workspace holds {} samples, got {}", self.batch, inputs.len()));
        }
        if params.config.seq_len != self.seq_len {
            return Err(invalid!(
                "workspace built for T={}, model has T={}",
                self.seq_len,
                params.config.seq_len
            ));
        }
        let t = self.seq_len;
        let d = params.config.input_dim;
        for (b, x) in inputs.iter().enumerate() {
            params.check_input(x)?;
            self.x.as_mut_slice()[b * t * d..(b + 1) * t * d].copy_from_slice(x.tokens().as_slice());
        }
        Ok(())
    }

    /// Runs the forward pass and returns the predictions.
    pub fn forward(&mut self, params: &TransformerParams, inputs: &[&Sequence]) -> Result<&[f64]> {
        self.load(params, inputs)?;
        self.forward_loaded(params);
        Ok(&self.yhat)
    }

    fn forward_loaded(&mut self, params: &TransformerParams) {
        let cfg = params.config;
        let (t, h, hd) = (self.seq_len, cfg.heads, cfg.head_dim);

        Matrix::gemm_into(1.0, &self.x, Trans::No, &params.enc_w1, Trans::Yes, 0.0, &mut self.pre1);
        add_row(&mut self.pre1, params.enc_b1.as_slice());
        self.h1 = self.pre1.map(|v| v.max(0.0));
        Matrix::gemm_into(1.0, &self.h1, Trans::No, &params.enc_w2, Trans::Yes, 0.0, &mut self.xh);
        add_row(&mut self.xh, params.enc_b2.as_slice());

        for i in 0..h {
            let q = params.w_q[i].matvec(params.cls.as_slice());
            let u = params.w_k[i].matvec_t(&q);
            self.q.row_mut(i).copy_from_slice(&q);
            self.u.row_mut(i).copy_from_slice(&u);
        }
        Matrix::gemm_into(1.0, &self.xh, Trans::No, &self.u, Trans::Yes, 0.0, &mut self.s);

        let mut scores = vec![0.0; t];
        for b in 0..self.batch {
            for i in 0..h {
                for (tt, sc) in scores.iter_mut().enumerate() {
                    *sc = self.s[(b * t + tt, i)];
                }
                softmax_beta_into(&scores, cfg.beta, self.p.row_mut(b * h + i));
                let xb = self.xb[i].row_mut(b);
                xb.fill(0.0);
                for (tt, &w) in self.p.row(b * h + i).iter().enumerate() {
                    axpy_slice(xb, w, self.xh.row(b * t + tt));
                }
            }
        }

        for i in 0..h {
            Matrix::gemm_into(
                1.0,
                &self.xb[i],
                Trans::No,
                &params.w_v[i],
                Trans::Yes,
                0.0,
                &mut self.head,
            );
            for b in 0..self.batch {
                self.c.row_mut(b)[i * hd..(i + 1) * hd].copy_from_slice(self.head.row(b));
            }
        }
        Matrix::gemm_into(1.0, &self.c, Trans::No, &params.w_o, Trans::Yes, 0.0, &mut self.z);
        add_row(&mut self.z, params.cls.as_slice());

        Matrix::gemm_into(1.0, &self.z, Trans::No, &params.ffn_w1, Trans::Yes, 0.0, &mut self.gpre);
        add_row(&mut self.gpre, params.ffn_b1.as_slice());
        self.g = self.gpre.map(gelu);
        let w2 = params.ffn_w2.as_slice();
        let b2 = params.ffn_b2[(0, 0)];
        for b in 0..self.batch {
            self.yhat[b] = dot(self.g.row(b), w2) + b2;
        }
    }

    /// Mean squared error over the batch; writes its gradient into `grads`
    /// (overwriting previous contents).
    pub fn loss_and_grad(
        &mut self,
        params: &TransformerParams,
        inputs: &[&Sequence],
        labels: &[f64],
        grads: &mut TransformerParams,
    ) -> Result<f64> {
        if labels.len() != inputs.len() {
            return Err(invalid!("{} inputs but {} labels", inputs.len(), labels.len()));
        }
        if grads.config != params.config {
            return Err(invalid!("gradient buffer has a different model config"));
        }
        self.load(params, inputs)?;
        self.forward_loaded(params);

        let cfg = params.config;
        let (t, h, hd, beta) = (self.seq_len, cfg.heads, cfg.head_dim, cfg.beta);
        let bsz = self.batch as f64;

        let mut loss = 0.0;
        let dy: Vec<f64> = self
            .yhat
            .iter()
            .zip(labels)
            .map(|(yh, y)| {
                let r = yh - y;
                loss += r * r;
                2.0 * r / bsz
            })
            .collect();
        loss /= bsz;

        // feed-forward block
        grads.ffn_b2[(0, 0)] = dy.iter().sum();
        let gw2 = grads.ffn_w2.as_mut_slice();
        gw2.fill(0.0);
        let w2 = params.ffn_w2.as_slice();
        for (b, &dyb) in dy.iter().enumerate() {
            axpy_slice(gw2, dyb, self.g.row(b));
            for ((o, &pre), &w) in self.d_gpre.row_mut(b).iter_mut().zip(self.gpre.row(b)).zip(w2) {
                *o = dyb * w * gelu_grad(pre);
            }
        }
        Matrix::gemm_into(
            1.0,
            &self.d_gpre,
            Trans::Yes,
            &self.z,
            Trans::No,
            0.0,
            &mut grads.ffn_w1,
        );
        col_sums_into(&self.d_gpre, grads.ffn_b1.as_mut_slice());
        Matrix::gemm_into(
            1.0,
            &self.d_gpre,
            Trans::No,
            &params.ffn_w1,
            Trans::No,
            0.0,
            &mut self.dz,
        );

        // output projection and class token
        col_sums_into(&self.dz, grads.cls.as_mut_slice());
        Matrix::gemm_into(1.0, &self.dz, Trans::Yes, &self.c, Trans::No, 0.0, &mut grads.w_o);
        Matrix::gemm_into(1.0, &self.dz, Trans::No, &params.w_o, Trans::No, 0.0, &mut self.dc);

        // heads
        self.dxh.fill(0.0);
        for i in 0..h {
            for b in 0..self.batch {
                self.dhead
                    .row_mut(b)
                    .copy_from_slice(&self.dc.row(b)[i * hd..(i + 1) * hd]);
            }
            Matrix::gemm_into(
                1.0,
                &self.dhead,
                Trans::Yes,
                &self.xb[i],
                Trans::No,
                0.0,
                &mut grads.w_v[i],
            );
            Matrix::gemm_into(
                1.0,
                &self.dhead,
                Trans::No,
                &params.w_v[i],
                Trans::No,
                0.0,
                &mut self.dxb,
            );
            for b in 0..self.batch {
                let p = self.p.row(b * h + i);
                let dxb = self.dxb.row(b);
                for (tt, &ptt) in p.iter().enumerate() {
                    let row = b * t + tt;
                    self.dp[tt] = dot(self.xh.row(row), dxb);
                    axpy_slice(self.dxh.row_mut(row), ptt, dxb);
                }
                softmax_beta_vjp(p, &self.dp, beta, &mut self.dsc);
                for tt in 0..t {
                    self.ds[(b * t + tt, i)] = self.dsc[tt];
                }
            }
        }
        Matrix::gemm_into(1.0, &self.ds, Trans::No, &self.u, Trans::No, 1.0, &mut self.dxh);
        Matrix::gemm_into(1.0, &self.ds, Trans::Yes, &self.xh, Trans::No, 0.0, &mut self.du);
        for i in 0..h {
            let q = self.q.row(i);
            let du = self.du.row(i);
            let dq = params.w_k[i].matvec(du);
            let wk = &mut grads.w_k[i];
            let wq = &mut grads.w_q[i];
            for r in 0..hd {
                for (o, &v) in wk.row_mut(r).iter_mut().zip(du) {
                    *o = q[r] * v;
                }
                for (o, &v) in wq.row_mut(r).iter_mut().zip(params.cls.as_slice()) {
                    *o = dq[r] * v;
                }
            }
            let back = params.w_q[i].matvec_t(&dq);
            axpy_slice(grads.cls.as_mut_slice(), 1.0, &back);
        }

        // encoder
        Matrix::gemm_into(1.0, &self.dxh, Trans::Yes, &self.h1, Trans::No, 0.0, &mut grads.enc_w2);
        col_sums_into(&self.dxh, grads.enc_b2.as_mut_slice());
        Matrix::gemm_into(1.0, &self.dxh, Trans::No, &params.enc_w2, Trans::No, 0.0, &mut self.dh1);
        for (g, &pre) in self.dh1.as_mut_slice().iter_mut().zip(self.pre1.as_slice()) {
            if pre <= 0.0 {
                *g = 0.0;
            }
        }
        Matrix::gemm_into(1.0, &self.dh1, Trans::Yes, &self.x, Trans::No, 0.0, &mut grads.enc_w1);
        col_sums_into(&self.dh1, grads.enc_b1.as_mut_slice());

        Ok(loss)
    }
}

fn add_row(m: &mut Matrix, bias: &[f64]) {
    for r in 0..m.rows() {
        axpy_slice(m.row_mut(r), 1.0, bias);
    }
}

fn col_sums_into(m: &Matrix, out: &mut [f64]) {
    out.fill(0.0);
    for r in 0..m.rows() {
        axpy_slice(out, 1.0, m.row(r));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::numerics::finite_diff::{central_gradient, relative_error, FD_STEP};
    use crate::numerics::rng;
    use crate::tasks::{sample_sequence, TokenDistribution};

    fn setup(seed: u64, batch: usize) -> (TransformerParams, Vec<Sequence>, Vec<f64>) {
        let cfg = ModelConfig {
            heads: 2,
            head_dim: 3,
            hidden: 7,
            input_dim: 3,
            seq_len: 5,
            beta: 1.3,
        };
        let mut r = rng::stream(seed, &[]);
        let p = TransformerParams::init(cfg, &mut r).unwrap();
        let xs: Vec<Sequence> = (0..batch)
            .map(|_| sample_sequence(&mut r, 5, 3, TokenDistribution::Gaussian))
            .collect();
        let ys = (0..batch).map(|k| (k as f64 * 0.7).sin()).collect();
        (p, xs, ys)
    }

    #[test]
    fn batched_forward_matches_per_sample() {
        let (p, xs, _) = setup(10, 6);
        let refs: Vec<&Sequence> = xs.iter().collect();
        let mut ws = BatchWorkspace::new(&p, 6);
        let batched = ws.forward(&p, &refs).unwrap().to_vec();
        for (x, yb) in xs.iter().zip(batched) {
            let y = p.forward(x).unwrap();
            assert!((y - yb).abs() <= 1e-12 * y.abs().max(1.0), "{y} vs {yb}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (p, xs, ys) = setup(11, 4);
        let refs: Vec<&Sequence> = xs.iter().collect();
        let mut ws = BatchWorkspace::new(&p, 4);
        let mut g = TransformerParams::zeros(p.config).unwrap();
        ws.loss_and_grad(&p, &refs, &ys, &mut g).unwrap();
        let analytic = g.flatten();
        let mut probe = p.clone();
        let numeric = central_gradient(
            |flat| {
                probe.assign_flat(flat).unwrap();
                let pred: Vec<f64> = xs.iter().map(|x| probe.forward(x).unwrap()).collect();
                pred.iter().zip(&ys).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 4.0
            },
            &p.flatten(),
            FD_STEP,
        );
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn rejects_mismatched_batch() {
        let (p, xs, ys) = setup(12, 3);
        let refs: Vec<&Sequence> = xs.iter().collect();
        let mut ws = BatchWorkspace::new(&p, 2);
        let mut g = TransformerParams::zeros(p.config).unwrap();
        assert!(ws.loss_and_grad(&p, &refs, &ys, &mut g).is_err());
        let mut ws = BatchWorkspace::new(&p, 3);
        assert!(ws.loss_and_grad(&p, &refs, &ys[..2], &mut g).is_err());
    }
}
