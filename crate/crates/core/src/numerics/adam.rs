// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    /// Allocates zero moments matching `shapes`.
    pub fn new(config: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update using the configured learning rate.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<()> {
        let lr = self.config.learning_rate;
        self.step_with_lr(params, grads, lr)
    }

    /// One Adam update with an explicit learning rate (for schedules).
    pub fn step_with_lr(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(invalid!(
                "adam expects {} tensors, got {} params / {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            ));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.first[k].shape() || g.shape() != self.first[k].shape() {
                return Err(invalid!(
                    "adam tensor {k}: moment shape {:?}, param {:?}, grad {:?}",
                    self.first[k].shape(),
                    p.shape(),
                    g.shape()
                ));
            }
        }

        self.step += 1;
        let AdamConfig {
            beta1, beta2, epsilon, ..
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[k].as_mut_slice();
            let v = self.second[k].as_mut_slice();
            for (((w, &gi), mi), vi) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
