// SPDX-License-Identifier: Apache-2.0

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::activation::{gelu, relu, softmax_beta_into};
use crate::numerics::matrix::{dot, Matrix};
use crate::numerics::rng::Rng;
use crate::tasks::Sequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of heads `h`.
    pub heads: usize,
    /// Per-head dimension `n`.
    pub head_dim: usize,
    /// Hidden width `N` shared by the encoder and the feed-forward block.
    pub hidden: usize,
    /// Token dimension `d`.
    pub input_dim: usize,
    /// Sequence length `T`.
    pub seq_len: usize,
    /// Softmax scale; fixed, not trained.
    pub beta: f64,
}

impl ModelConfig {
    pub fn embed_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("hidden", self.hidden),
            ("input_dim", self.input_dim),
            ("seq_len", self.seq_len),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(invalid!("model config: {name} must be positive"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid!("model config: beta must be positive, got {}", self.beta));
        }
        Ok(())
    }

    /// Weights and biases of the encoder and feed-forward block.
    pub fn parameter_count(&self) -> Result<usize> {
        self.validate()?;
        let (d, n, e) = (self.input_dim, self.hidden, self.embed_dim());
        let encoder = d * n + n + n * e + e;
        let ffn = e * n + n + n + 1;
        Ok(encoder + ffn)
    }

    /// Class token, `W_Q`, `W_K`, `W_V` for every head, and `W_O`.
    pub fn attention_parameter_count(&self) -> usize {
        let e = self.embed_dim();
        e + 3 * self.heads * self.head_dim * e + e * e
    }
}

/// All trainable tensors. Bias vectors are `1 x k` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams {
    pub config: ModelConfig,
    pub enc_w1: Matrix,
    pub enc_b1: Matrix,
    pub enc_w2: Matrix,
    pub enc_b2: Matrix,
    pub cls: Matrix,
    pub w_q: Vec<Matrix>,
    pub w_k: Vec<Matrix>,
    pub w_v: Vec<Matrix>,
    pub w_o: Matrix,
    pub ffn_w1: Matrix,
    pub ffn_b1: Matrix,
    pub ffn_w2: Matrix,
    pub ffn_b2: Matrix,
}

fn uniform(rng: &mut Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

impl TransformerParams {
    /// All tensors zero (used for gradient accumulators).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (d, n, e, hd) = (config.input_dim, config.hidden, config.embed_dim(), config.head_dim);
        Ok(Self {
            config,
            enc_w1: Matrix::zeros(n, d),
            enc_b1: Matrix::zeros(1, n),
            enc_w2: Matrix::zeros(e, n),
            enc_b2: Matrix::zeros(1, e),
            cls: Matrix::zeros(1, e),
            w_q: vec![Matrix::zeros(hd, e); config.heads],
            w_k: vec![Matrix::zeros(hd, e); config.heads],
            w_v: vec![Matrix::zeros(hd, e); config.heads],
            w_o: Matrix::zeros(e, e),
            ffn_w1: Matrix::zeros(n, e),
            ffn_b1: Matrix::zeros(1, n),
            ffn_w2: Matrix::zeros(1, n),
            ffn_b2: Matrix::zeros(1, 1),
        })
    }

    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for every tensor.
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (d, n, e, hd) = (config.input_dim, config.hidden, config.embed_dim(), config.head_dim);
        let heads = |rng: &mut Rng| (0..config.heads).map(|_| uniform(rng, hd, e, e)).collect::<Vec<_>>();
        let enc_w1 = uniform(rng, n, d, d);
        let enc_b1 = uniform(rng, 1, n, d);
        let enc_w2 = uniform(rng, e, n, n);
        let enc_b2 = uniform(rng, 1, e, n);
        let cls = uniform(rng, 1, e, e);
        let w_q = heads(rng);
        let w_k = heads(rng);
        let w_v = heads(rng);
        Ok(Self {
            config,
            enc_w1,
            enc_b1,
            enc_w2,
            enc_b2,
            cls,
            w_q,
            w_k,
            w_v,
            w_o: uniform(rng, e, e, e),
            ffn_w1: uniform(rng, n, e, e),
            ffn_b1: uniform(rng, 1, n, e),
            ffn_w2: uniform(rng, 1, n, n),
            ffn_b2: uniform(rng, 1, 1, n),
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.config.parameter_count().expect("validated at construction")
    }

    pub fn attention_parameter_count(&self) -> usize {
        self.config.attention_parameter_count()
    }

    /// Named tensors in a fixed order shared by Adam and checkpoints.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = vec![
            ("encoder.w1".into(), &self.enc_w1),
            ("encoder.b1".into(), &self.enc_b1),
            ("encoder.w2".into(), &self.enc_w2),
            ("encoder.b2".into(), &self.enc_b2),
            ("cls".into(), &self.cls),
        ];
        for (i, m) in self.w_q.iter().enumerate() {
            out.push((format!("head{i}.w_q"), m));
        }
        for (i, m) in self.w_k.iter().enumerate() {
            out.push((format!("head{i}.w_k"), m));
        }
        for (i, m) in self.w_v.iter().enumerate() {
            out.push((format!("head{i}.w_v"), m));
        }
        out.extend([
            ("w_o".into(), &self.w_o),
            ("ffn.w1".into(), &self.ffn_w1),
            ("ffn.b1".into(), &self.ffn_b1),
            ("ffn.w2".into(), &self.ffn_w2),
            ("ffn.b2".into(), &self.ffn_b2),
        ]);
        out
    }

    /// Same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = vec![
            &mut self.enc_w1,
            &mut self.enc_b1,
            &mut self.enc_w2,
            &mut self.enc_b2,
            &mut self.cls,
        ];
        out.extend(self.w_q.iter_mut());
        out.extend(self.w_k.iter_mut());
        out.extend(self.w_v.iter_mut());
        out.extend([
            &mut self.w_o,
            &mut self.ffn_w1,
            &mut self.ffn_b1,
            &mut self.ffn_w2,
            &mut self.ffn_b2,
        ]);
        out
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|(_, m)| m.shape()).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|(_, m)| m.as_slice().iter().copied())
            .collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.shapes().iter().map(|(r, c)| r * c).sum();
        if flat.len() != total {
            return Err(invalid!("expected {total} parameters, got {}", flat.len()));
        }
        let mut offset = 0;
        for m in self.tensors_mut() {
            let k = m.len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + k]);
            offset += k;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    pub fn check_input(&self, x: &Sequence) -> Result<()> {
        if x.len() != self.config.seq_len {
            return Err(invalid!(
                "sequence length {} != model T {}",
                x.len(),
                self.config.seq_len
            ));
        }
        if x.dim() != self.config.input_dim {
            return Err(invalid!(
                "token dimension {} != model d {}",
                x.dim(),
                self.config.input_dim
            ));
        }
        Ok(())
    }

    /// Encoder output `x̂(t)` for one token.
    pub fn encode(&self, token: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self
            .enc_w1
            .matvec(token)
            .iter()
            .zip(self.enc_b1.as_slice())
            .map(|(a, b)| relu(a + b))
            .collect();
        self.enc_w2
            .matvec(&h)
            .iter()
            .zip(self.enc_b2.as_slice())
            .map(|(a, b)| a + b)
            .collect()
    }

    /// Attention weights `softmax_beta(rho_i)` for every head, computed as
    /// `rho_i(t) = (W_Qi c0)ᵀ (W_Ki x̂(t))`.
    pub fn attention_weights(&self, x: &Sequence) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let encoded: Vec<Vec<f64>> = (0..x.len()).map(|t| self.encode(x.token(t))).collect();
        Ok(self.weights_from_encoded(&encoded))
    }

    fn weights_from_encoded(&self, encoded: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..self.config.heads)
            .map(|i| {
                let q = self.w_q[i].matvec(self.cls.as_slice());
                let scores: Vec<f64> = encoded.iter().map(|xh| dot(&q, &self.w_k[i].matvec(xh))).collect();
                let mut p = vec![0.0; scores.len()];
                softmax_beta_into(&scores, self.config.beta, &mut p);
                p
            })
            .collect()
    }

    /// The feed-forward input `c0 + W_O Concat(head outputs)`.
    pub fn post_attention(&self, x: &Sequence) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let encoded: Vec<Vec<f64>> = (0..x.len()).map(|t| self.encode(x.token(t))).collect();
        let weights = self.weights_from_encoded(&encoded);
        let mut concat = Vec::with_capacity(self.config.embed_dim());
        for (i, w) in weights.iter().enumerate() {
            let mut head = vec![0.0; self.config.head_dim];
            for (xh, &p) in encoded.iter().zip(w) {
                for (o, v) in head.iter_mut().zip(self.w_v[i].matvec(xh)) {
                    *o += p * v;
                }
            }
            concat.extend(head);
        }
        Ok(self
            .w_o
            .matvec(&concat)
            .iter()
            .zip(self.cls.as_slice())
            .map(|(a, c)| a + c)
            .collect())
    }

    /// The feed-forward block `F(z)`.
    pub fn feed_forward(&self, z: &[f64]) -> f64 {
        let g: Vec<f64> = self
            .ffn_w1
            .matvec(z)
            .iter()
            .zip(self.ffn_b1.as_slice())
            .map(|(a, b)| gelu(a + b))
            .collect();
        dot(self.ffn_w2.as_slice(), &g) + self.ffn_b2[(0, 0)]
    }

    /// Model output for one sequence.
    pub fn forward(&self, x: &Sequence) -> Result<f64> {
        let z = self.post_attention(x)?;
        Ok(self.feed_forward(&z))
    }
}
