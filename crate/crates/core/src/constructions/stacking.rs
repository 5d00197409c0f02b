// SPDX-License-Identifier: Apache-2.0

//! Merging a 2-layer, a 3-layer and a 2-layer ReLU net into one 5-layer net.
//!
//! With `F1 = A2 σ A1`, `F2 = B3 σ B2 σ B1` and `F3 = C2 σ C1`, the
//! composition is `C2 σ (C1 B3) σ B2 σ (B1 A2) σ A1`: adjacent affine maps
//! with no activation between them collapse into one.

use serde::{Deserialize, Serialize};

use super::net::ReluNet;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedNet {
    net: ReluNet,
    parts: [ReluNet; 3],
}

pub fn stack_networks(f1: &ReluNet, f2: &ReluNet, f3: &ReluNet) -> Result<StackedNet> {
    for (name, net, depth) in [("F1", f1, 2), ("F2", f2, 3), ("F3", f3, 2)] {
        if net.depth() != depth {
            return Err(invalid!("{name} must have {depth} affine layers, has {}", net.depth()));
        }
    }
    if f1.output_dim() != f2.input_dim() {
        return Err(invalid!(
            "F1 outputs {} values, F2 expects {}",
            f1.output_dim(),
            f2.input_dim()
        ));
    }
    if f2.output_dim() != f3.input_dim() {
        return Err(invalid!(
            "F2 outputs {} values, F3 expects {}",
            f2.output_dim(),
            f3.input_dim()
        ));
    }
    let (a, b, c) = (f1.layers(), f2.layers(), f3.layers());
    let net = ReluNet::new(vec![
        a[0].clone(),
        b[0].after(&a[1])?,
        b[1].clone(),
        c[0].after(&b[2])?,
        c[1].clone(),
    ])?;
    Ok(StackedNet {
        net,
        parts: [f1.clone(), f2.clone(), f3.clone()],
    })
}

impl StackedNet {
    pub fn net(&self) -> &ReluNet {
        &self.net
    }

    pub fn parts(&self) -> &[ReluNet; 3] {
        &self.parts
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.net.eval(x)
    }

    /// `F3(F2(F1(x)))` evaluated part by part.
    pub fn eval_sequential(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.parts[0].eval(x)?;
        let y = self.parts[1].eval_unchecked(&y);
        Ok(self.parts[2].eval_unchecked(&y))
    }

    /// Largest `|a - b| / max(|b|, 1)` between the merged and sequential
    /// evaluations over `inputs`.
    pub fn max_relative_deviation<'a>(&self, inputs: impl IntoIterator<Item = &'a [f64]>) -> Result<f64> {
        let mut worst = 0.0f64;
        for x in inputs {
            let a = self.eval(x)?;
            let b = self.eval_sequential(x)?;
            for (p, q) in a.iter().zip(&b) {
                worst = worst.max((p - q).abs() / q.abs().max(1.0));
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructions::Affine;
    use crate::numerics::{rng, Matrix};
    use rand::Rng as _;

    fn random_net(r: &mut rng::Rng, dims: &[usize]) -> ReluNet {
        ReluNet::new(
            dims.windows(2)
                .map(|w| {
                    Affine::new(
                        Matrix::from_fn(w[1], w[0], |_, _| r.random_range(-1.0..1.0)),
                        (0..w[1]).map(|_| r.random_range(-0.5..0.5)).collect(),
                    )
                    .unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn random_nets_compose_exactly() {
        let mut r = rng::stream(11, &[]);
        let f1 = random_net(&mut r, &[3, 7, 4]);
        let f2 = random_net(&mut r, &[4, 9, 5, 2]);
        let f3 = random_net(&mut r, &[2, 6, 1]);
        let s = stack_networks(&f1, &f2, &f3).unwrap();
        assert_eq!(s.net().depth(), 5);
        assert_eq!(s.net().hidden_widths(), vec![7, 9, 5, 6]);
        let xs: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..3).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect();
        let dev = s.max_relative_deviation(xs.iter().map(Vec::as_slice)).unwrap();
        assert!(dev <= 1e-12, "{dev}");
    }

    #[test]
    fn identity_layers_on_nonnegative_input() {
        let id = |n: usize| Affine::new(Matrix::identity(n), vec![0.0; n]).unwrap();
        let two = ReluNet::new(vec![id(3), id(3)]).unwrap();
        let three = ReluNet::new(vec![id(3), id(3), id(3)]).unwrap();
        let s = stack_networks(&two, &three, &two).unwrap();
        let x = [0.0, 0.4, 2.5];
        assert_eq!(s.eval(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn rejects_mismatch_and_depth() {
        let mut r = rng::stream(2, &[]);
        let f1 = random_net(&mut r, &[2, 3, 4]);
        let f2 = random_net(&mut r, &[5, 3, 3, 2]);
        let f3 = random_net(&mut r, &[2, 3, 1]);
        assert!(stack_networks(&f1, &f2, &f3).is_err());
        let f2_ok = random_net(&mut r, &[4, 3, 3, 2]);
        assert!(stack_networks(&f1, &f2_ok, &f3).is_ok());
        assert!(stack_networks(&f1, &f1, &f3).is_err());
        let f3_bad = random_net(&mut r, &[3, 3, 1]);
        assert!(stack_networks(&f1, &f2_ok, &f3_bad).is_err());
    }
}
