// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::Matrix;

/// `x -> W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Affine {
    pub fn new(w: Matrix, b: Vec<f64>) -> Result<Self> {
        if w.rows() != b.len() {
            return Err(invalid!("affine map with {} rows but {} biases", w.rows(), b.len()));
        }
        Ok(Self { w, b })
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.w.matvec(x);
        for (v, b) in y.iter_mut().zip(&self.b) {
            *v += b;
        }
        y
    }

    /// `self ∘ inner`, i.e. `x -> W (W' x + b') + b`.
    pub fn after(&self, inner: &Affine) -> Result<Affine> {
        let w = self.w.matmul(&inner.w)?;
        let mut b = self.w.matvec(&inner.b);
        for (v, c) in b.iter_mut().zip(&self.b) {
            *v += c;
        }
        Affine::new(w, b)
    }
}

/// A fully connected ReLU network: affine maps with ReLU between consecutive
/// maps and none after the last. A net with `k` maps is called `k`-layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReluNet {
    layers: Vec<Affine>,
}

impl ReluNet {
    pub fn new(layers: Vec<Affine>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid!("a network needs at least one affine map"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(invalid!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Exact two-layer representation of an affine map via
    /// `g = ReLU(g) - ReLU(-g)`.
    pub fn affine_as_relu(map: &Affine) -> Self {
        let (m, n) = (map.out_dim(), map.in_dim());
        let w1 = Matrix::from_fn(2 * m, n, |r, c| if r < m { map.w[(r, c)] } else { -map.w[(r - m, c)] });
        let b1 = (0..2 * m)
            .map(|r| if r < m { map.b[r] } else { -map.b[r - m] })
            .collect();
        let w2 = Matrix::from_fn(m, 2 * m, |r, c| {
            if c == r {
                1.0
            } else if c == r + m {
                -1.0
            } else {
                0.0
            }
        });
        Self::new(vec![Affine { w: w1, b: b1 }, Affine { w: w2, b: vec![0.0; m] }]).expect("shapes chain")
    }

    pub fn layers(&self) -> &[Affine] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Widths of the hidden (ReLU) layers.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Affine::out_dim)
            .collect()
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.layers.iter().map(|l| l.w.max_abs()).fold(0.0, f64::max)
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(invalid!("network expects {} inputs, got {}", self.input_dim(), x.len()));
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut v = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            v = layer.apply(&v);
            if k < last {
                v.iter_mut().for_each(|a| *a = a.max(0.0));
            }
        }
        v
    }
}
