// SPDX-License-Identifier: Apache-2.0

//! A small matrix-valued reverse-mode tape.
//!
//! Nodes are recorded first and evaluated by [`Tape::forward`]; leaves can be
//! reassigned with [`Tape::set_leaf`] and the same graph replayed. Only the
//! primitives the transformer needs are supported.
//!
//! ```
//! use headcount_core::numerics::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Matrix::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! tape.forward().unwrap();
//! let grads = tape.backward(y, 1.0).unwrap();
//! assert_eq!(grads.get(x).unwrap()[(0, 0)], 6.0);
//! ```

use super::activation::{gelu, gelu_grad, relu, softmax_beta_into, softmax_beta_vjp};
use super::matrix::{Matrix, Trans};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `a * b`.
    MatMul(NodeId, NodeId),
    /// `a * bᵀ`.
    MatMulT(NodeId, NodeId),
    /// Elementwise sum; `b` may be a `1 x cols` row broadcast over `a`'s rows.
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise (Hadamard) product.
    Mul(NodeId, NodeId),
    Relu(NodeId),
    Gelu(NodeId),
    /// Row-wise softmax with scale `beta`.
    Softmax(NodeId, f64),
    /// Sum of all entries, producing `1 x 1`.
    Sum(NodeId),
    Scale(NodeId, f64),
    Transpose(NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: (usize, usize),
    value: Option<Matrix>,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    evaluated: bool,
}

/// Gradients of one scalar output with respect to every node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Matrix>,
    leaves: Vec<NodeId>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0)
    }

    /// Leaf ids in recording order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].shape
    }

    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.evaluated = false;
        self.push(Op::Leaf, value.shape(), Some(value))
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf))
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    /// Replaces a leaf's value; the tape must be re-evaluated afterwards.
    pub fn set_leaf(&mut self, id: NodeId, value: Matrix) -> Result<()> {
        let node = self
            .nodes
            .get_mut(id.0)
            .ok_or_else(|| invalid!("unknown node {}", id.0))?;
        if !matches!(node.op, Op::Leaf) {
            return Err(invalid!("node {} is not a leaf", id.0));
        }
        if node.shape != value.shape() {
            return Err(invalid!(
                "leaf shape {:?} cannot take value of shape {:?}",
                node.shape,
                value.shape()
            ));
        }
        node.value = Some(value);
        self.evaluated = false;
        Ok(())
    }

    pub fn value(&self, id: NodeId) -> Result<&Matrix> {
        if !self.evaluated {
            return Err(Error::State("tape has not been evaluated".into()));
        }
        self.nodes[id.0]
            .value
            .as_ref()
            .ok_or_else(|| Error::State(format!("node {} has no value", id.0)))
    }

    /// Smallest |input| over all ReLU nodes; gradient checks use it to keep
    /// finite-difference probes away from the kink.
    pub fn relu_margin(&self) -> Result<f64> {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                let v = self.value(a)?;
                margin = v.as_slice().iter().fold(margin, |m, x| m.min(x.abs()));
            }
        }
        Ok(margin)
    }

    fn push(&mut self, op: Op, shape: (usize, usize), value: Option<Matrix>) -> NodeId {
        self.nodes.push(Node { op, shape, value });
        NodeId(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op, shape: (usize, usize)) -> NodeId {
        self.evaluated = false;
        self.push(op, shape, None)
    }

    fn check(&self, id: NodeId) -> Result<(usize, usize)> {
        self.nodes
            .get(id.0)
            .map(|n| n.shape)
            .ok_or_else(|| invalid!("unknown node {}", id.0))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.check(a)?, self.check(b)?);
        if sa.1 != sb.0 {
            return Err(invalid!("matmul shape mismatch {sa:?} x {sb:?}"));
        }
        Ok(self.record(Op::MatMul(a, b), (sa.0, sb.1)))
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.check(a)?, self.check(b)?);
        if sa.1 != sb.1 {
            return Err(invalid!("matmul_t shape mismatch {sa:?} x {sb:?}ᵀ"));
        }
        Ok(self.record(Op::MatMulT(a, b), (sa.0, sb.0)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.check(a)?, self.check(b)?);
        if sa != sb && sb != (1, sa.1) {
            return Err(invalid!("add shape mismatch {sa:?} + {sb:?}"));
        }
        Ok(self.record(Op::Add(a, b), sa))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.check(a)?, self.check(b)?);
        if sa != sb {
            return Err(invalid!("sub shape mismatch {sa:?} - {sb:?}"));
        }
        Ok(self.record(Op::Sub(a, b), sa))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.check(a)?, self.check(b)?);
        if sa != sb {
            return Err(invalid!("mul shape mismatch {sa:?} * {sb:?}"));
        }
        Ok(self.record(Op::Mul(a, b), sa))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.check(a)?;
        Ok(self.record(Op::Relu(a), s))
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.check(a)?;
        Ok(self.record(Op::Gelu(a), s))
    }

    pub fn softmax_beta(&mut self, a: NodeId, beta: f64) -> Result<NodeId> {
        let s = self.check(a)?;
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid!("softmax scale must be positive, got {beta}"));
        }
        Ok(self.record(Op::Softmax(a, beta), s))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        Ok(self.record(Op::Sum(a), (1, 1)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let s = self.check(a)?;
        Ok(self.record(Op::Scale(a, c), s))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.check(a)?;
        Ok(self.record(Op::Transpose(a), (c, r)))
    }

    /// Evaluates every node in recording order.
    pub fn forward(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            let op = self.nodes[i].op.clone();
            let shape = self.nodes[i].shape;
            let v = |id: NodeId| self.nodes[id.0].value.as_ref().expect("topological order");
            let value = match op {
                Op::Leaf => continue,
                Op::MatMul(a, b) => {
                    let mut out = Matrix::zeros(shape.0, shape.1);
                    Matrix::gemm_into(1.0, v(a), Trans::No, v(b), Trans::No, 0.0, &mut out);
                    out
                }
                Op::MatMulT(a, b) => {
                    let mut out = Matrix::zeros(shape.0, shape.1);
                    Matrix::gemm_into(1.0, v(a), Trans::No, v(b), Trans::Yes, 0.0, &mut out);
                    out
                }
                Op::Add(a, b) => {
                    let (va, vb) = (v(a), v(b));
                    let mut out = va.clone();
                    if va.shape() == vb.shape() {
                        out.axpy(1.0, vb);
                    } else {
                        for r in 0..out.rows() {
                            for (o, x) in out.row_mut(r).iter_mut().zip(vb.as_slice()) {
                                *o += x;
                            }
                        }
                    }
                    out
                }
                Op::Sub(a, b) => {
                    let mut out = v(a).clone();
                    out.axpy(-1.0, v(b));
                    out
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (v(a), v(b));
                    let data = va.as_slice().iter().zip(vb.as_slice()).map(|(x, y)| x * y).collect();
                    Matrix::from_vec(shape.0, shape.1, data)?
                }
                Op::Relu(a) => v(a).map(relu),
                Op::Gelu(a) => v(a).map(gelu),
                Op::Softmax(a, beta) => {
                    let va = v(a);
                    if !va.is_finite() {
                        return Err(invalid!("non-finite softmax input at node {i}"));
                    }
                    let mut out = Matrix::zeros(shape.0, shape.1);
                    for r in 0..shape.0 {
                        softmax_beta_into(va.row(r), beta, out.row_mut(r));
                    }
                    out
                }
                Op::Sum(a) => Matrix::scalar(v(a).as_slice().iter().sum()),
                Op::Scale(a, c) => v(a).map(|x| c * x),
                Op::Transpose(a) => v(a).transpose(),
            };
            self.nodes[i].value = Some(value);
        }
        self.evaluated = true;
        Ok(())
    }

    /// Reverse sweep from a `1 x 1` output seeded with `seed_grad`.
    pub fn backward(&self, output: NodeId, seed_grad: f64) -> Result<Gradients> {
        if !self.evaluated {
            return Err(Error::State("backward called before forward".into()));
        }
        if self.check(output)? != (1, 1) {
            return Err(invalid!("backward output must be 1x1"));
        }
        if !seed_grad.is_finite() {
            return Err(invalid!("seed gradient {seed_grad} is not finite"));
        }
        let mut grads: Vec<Matrix> = self.nodes.iter().map(|n| Matrix::zeros(n.shape.0, n.shape.1)).collect();
        grads[output.0][(0, 0)] = seed_grad;

        for i in (0..=output.0).rev() {
            let op = self.nodes[i].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            let g = std::mem::replace(&mut grads[i], Matrix::zeros(0, 0));
            let val = |id: NodeId| self.nodes[id.0].value.as_ref().expect("evaluated");
            match op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    Matrix::gemm_into(1.0, &g, Trans::No, val(b), Trans::Yes, 1.0, &mut grads[a.0]);
                    Matrix::gemm_into(1.0, val(a), Trans::Yes, &g, Trans::No, 1.0, &mut grads[b.0]);
                }
                Op::MatMulT(a, b) => {
                    Matrix::gemm_into(1.0, &g, Trans::No, val(b), Trans::No, 1.0, &mut grads[a.0]);
                    Matrix::gemm_into(1.0, &g, Trans::Yes, val(a), Trans::No, 1.0, &mut grads[b.0]);
                }
                Op::Add(a, b) => {
                    grads[a.0].axpy(1.0, &g);
                    if self.nodes[b.0].shape == g.shape() {
                        grads[b.0].axpy(1.0, &g);
                    } else {
                        let gb = grads[b.0].as_mut_slice();
                        for r in 0..g.rows() {
                            for (o, x) in gb.iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    grads[a.0].axpy(1.0, &g);
                    grads[b.0].axpy(-1.0, &g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(a).clone(), val(b).clone());
                    for (k, gk) in g.as_slice().iter().enumerate() {
                        grads[a.0].as_mut_slice()[k] += gk * vb.as_slice()[k];
                        grads[b.0].as_mut_slice()[k] += gk * va.as_slice()[k];
                    }
                }
                Op::Relu(a) => {
                    let va = val(a);
                    let ga = grads[a.0].as_mut_slice();
                    for (k, gk) in g.as_slice().iter().enumerate() {
                        if va.as_slice()[k] > 0.0 {
                            ga[k] += gk;
                        }
                    }
                }
                Op::Gelu(a) => {
                    let va = val(a);
                    let ga = grads[a.0].as_mut_slice();
                    for (k, gk) in g.as_slice().iter().enumerate() {
                        ga[k] += gk * gelu_grad(va.as_slice()[k]);
                    }
                }
                Op::Softmax(a, beta) => {
                    let p = self.nodes[i].value.as_ref().expect("evaluated");
                    let mut buf = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        softmax_beta_vjp(p.row(r), g.row(r), beta, &mut buf);
                        for (o, x) in grads[a.0].row_mut(r).iter_mut().zip(&buf) {
                            *o += x;
                        }
                    }
                }
                Op::Sum(a) => {
                    let s = g[(0, 0)];
                    grads[a.0].as_mut_slice().iter_mut().for_each(|x| *x += s);
                }
                Op::Scale(a, c) => grads[a.0].axpy(c, &g),
                Op::Transpose(a) => grads[a.0].axpy(1.0, &g.transpose()),
            }
            grads[i] = g;
        }
        Ok(Gradients {
            grads,
            leaves: self.leaves(),
        })
    }
}
