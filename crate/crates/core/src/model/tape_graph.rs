// SPDX-License-Identifier: Apache-2.0

//! The transformer written out on the generic [`Tape`], token by token.
//!
//! Keys and values are formed per token and heads are concatenated through
//! constant selection matrices, so this route shares no arithmetic with the
//! batched trainer. It is slow and meant for checking gradients.

use super::params::TransformerParams;
use crate::error::{invalid, Result};
use crate::numerics::{Matrix, NodeId, Tape};
use crate::tasks::Sequence;

pub struct ModelGraph {
    tape: Tape,
    params: Vec<NodeId>,
    inputs: Vec<NodeId>,
    outputs: Vec<NodeId>,
    loss: NodeId,
}

impl ModelGraph {
    /// Records the mean squared error of `params` on `(inputs, labels)`.
    pub fn build(params: &TransformerParams, inputs: &[Sequence], labels: &[f64]) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(invalid!("need matching non-empty inputs and labels"));
        }
        let cfg = params.config;
        let (e, hd) = (cfg.embed_dim(), cfg.head_dim);
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = params
            .tensors()
            .into_iter()
            .map(|(_, m)| tape.leaf(m.clone()))
            .collect();
        let h = cfg.heads;
        let (w1, b1, w2, b2, cls) = (ids[0], ids[1], ids[2], ids[3], ids[4]);
        let wq = &ids[5..5 + h];
        let wk = &ids[5 + h..5 + 2 * h];
        let wv = &ids[5 + 2 * h..5 + 3 * h];
        let rest = &ids[5 + 3 * h..];
        let (wo, f1, fb1, f2, fb2) = (rest[0], rest[1], rest[2], rest[3], rest[4]);

        let select: Vec<NodeId> = (0..h)
            .map(|i| tape.leaf(Matrix::from_fn(hd, e, |r, c| if c == i * hd + r { 1.0 } else { 0.0 })))
            .collect();

        let mut input_ids = Vec::with_capacity(inputs.len());
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut sq_terms = Vec::with_capacity(inputs.len());
        for (x, &y) in inputs.iter().zip(labels) {
            params.check_input(x)?;
            let xid = tape.leaf(x.tokens().clone());
            input_ids.push(xid);
            let a = tape.matmul_t(xid, w1)?;
            let a = tape.add(a, b1)?;
            let hid = tape.relu(a)?;
            let xh = tape.matmul_t(hid, w2)?;
            let xh = tape.add(xh, b2)?;

            let mut concat: Option<NodeId> = None;
            for i in 0..h {
                let q = tape.matmul_t(cls, wq[i])?;
                let k = tape.matmul_t(xh, wk[i])?;
                let scores = tape.matmul_t(q, k)?;
                let p = tape.softmax_beta(scores, cfg.beta)?;
                let v = tape.matmul_t(xh, wv[i])?;
                let head = tape.matmul(p, v)?;
                let placed = tape.matmul(head, select[i])?;
                concat = Some(match concat {
                    None => placed,
                    Some(c) => tape.add(c, placed)?,
                });
            }
            let concat = concat.expect("at least one head");
            let z = tape.matmul_t(concat, wo)?;
            let z = tape.add(z, cls)?;
            let g = tape.matmul_t(z, f1)?;
            let g = tape.add(g, fb1)?;
            let g = tape.gelu(g)?;
            let out = tape.matmul_t(g, f2)?;
            let out = tape.add(out, fb2)?;
            outputs.push(out);

            let target = tape.leaf(Matrix::scalar(y));
            let r = tape.sub(out, target)?;
            sq_terms.push(tape.mul(r, r)?);
        }
        let mut total = sq_terms[0];
        for &s in &sq_terms[1..] {
            total = tape.add(total, s)?;
        }
        let loss = tape.scale(total, 1.0 / inputs.len() as f64)?;
        tape.forward()?;
        Ok(Self {
            tape,
            params: ids,
            inputs: input_ids,
            outputs,
            loss,
        })
    }

    /// Replaces every parameter leaf and re-evaluates.
    pub fn set_params(&mut self, params: &TransformerParams) -> Result<()> {
        let tensors = params.tensors();
        if tensors.len() != self.params.len() {
            return Err(invalid!("parameter list length changed"));
        }
        for (&id, (_, m)) in self.params.iter().zip(tensors) {
            self.tape.set_leaf(id, m.clone())?;
        }
        self.tape.forward()
    }

    pub fn loss(&self) -> Result<f64> {
        Ok(self.tape.value(self.loss)?[(0, 0)])
    }

    pub fn predictions(&self) -> Result<Vec<f64>> {
        self.outputs.iter().map(|&o| Ok(self.tape.value(o)?[(0, 0)])).collect()
    }

    /// Gradient of the loss for each parameter tensor, in `tensors()` order.
    pub fn gradients(&self) -> Result<Vec<Matrix>> {
        let g = self.tape.backward(self.loss, 1.0)?;
        Ok(self
            .params
            .iter()
            .map(|&id| g.get(id).expect("leaf gradient").clone())
            .collect())
    }

    /// Smallest distance of any ReLU pre-activation from its kink.
    pub fn relu_margin(&self) -> Result<f64> {
        self.tape.relu_margin()
    }

    pub fn input_nodes(&self) -> &[NodeId] {
        &self.inputs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BatchWorkspace, ModelConfig};
    use crate::numerics::rng;
    use crate::tasks::{sample_sequence, TokenDistribution};

    #[test]
    fn agrees_with_batched_route() {
        let cfg = ModelConfig {
            heads: 3,
            head_dim: 2,
            hidden: 6,
            input_dim: 2,
            seq_len: 4,
            beta: 0.8,
        };
        let mut r = rng::stream(20, &[]);
        let p = TransformerParams::init(cfg, &mut r).unwrap();
        let xs: Vec<Sequence> = (0..5)
            .map(|_| sample_sequence(&mut r, 4, 2, TokenDistribution::Gaussian))
            .collect();
        let ys: Vec<f64> = (0..5).map(|k| k as f64 / 5.0).collect();
        let graph = ModelGraph::build(&p, &xs, &ys).unwrap();

        let refs: Vec<&Sequence> = xs.iter().collect();
        let mut ws = BatchWorkspace::new(&p, 5);
        let mut g = TransformerParams::zeros(cfg).unwrap();
        let loss = ws.loss_and_grad(&p, &refs, &ys, &mut g).unwrap();

        assert!((loss - graph.loss().unwrap()).abs() < 1e-12);
        for (a, b) in graph.gradients().unwrap().iter().zip(g.tensors()) {
            let scale = a.max_abs().max(b.1.max_abs()).max(1e-6);
            let mut diff = a.clone();
            diff.axpy(-1.0, b.1);
            assert!(diff.max_abs() / scale < 1e-10, "{}", b.0);
        }
    }

    #[test]
    fn replay_after_parameter_change() {
        let cfg = ModelConfig {
            heads: 1,
            head_dim: 2,
            hidden: 3,
            input_dim: 1,
            seq_len: 3,
            beta: 1.0,
        };
        let mut r = rng::stream(21, &[]);
        let p = TransformerParams::init(cfg, &mut r).unwrap();
        let q = TransformerParams::init(cfg, &mut r).unwrap();
        let xs = vec![sample_sequence(&mut r, 3, 1, TokenDistribution::Gaussian)];
        let mut graph = ModelGraph::build(&p, &xs, &[0.5]).unwrap();
        graph.set_params(&q).unwrap();
        assert_eq!(
            graph.predictions().unwrap()[0],
            ModelGraph::build(&q, &xs, &[0.5]).unwrap().predictions().unwrap()[0]
        );
        assert!((graph.predictions().unwrap()[0] - q.forward(&xs[0]).unwrap()).abs() < 1e-12);
    }
}
