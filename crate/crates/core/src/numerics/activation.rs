// SPDX-License-Identifier: Apache-2.0

//! Pointwise activations and the scaled softmax.

use crate::error::{invalid, Result};

/// `sqrt(2 / pi)`, the tanh-approximation GeLU constant.
pub const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient of the tanh-approximation GeLU.
pub const GELU_CUBIC: f64 = 0.044_715;

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
pub fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// GeLU, tanh approximation:
/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    let u = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let th = u.tanh();
    let du = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

/// Softmax of `beta * scores`, evaluated as `exp(beta * (s - max s))` so large
/// scales do not overflow.
pub fn softmax_beta(scores: &[f64], beta: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid!("softmax scale must be positive and finite, got {beta}"));
    }
    if scores.is_empty() {
        return Err(invalid!("softmax of an empty score vector"));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(invalid!("non-finite attention score {bad}"));
    }
    let mut out = vec![0.0; scores.len()];
    softmax_beta_into(scores, beta, &mut out);
    Ok(out)
}

/// Unchecked kernel behind [`softmax_beta`]; inputs must be finite.
#[inline]
pub fn softmax_beta_into(scores: &[f64], beta: f64, out: &mut [f64]) {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        let e = (beta * (s - m)).exp();
        *o = e;
        total += e;
    }
    let inv = 1.0 / total;
    out.iter_mut().for_each(|o| *o *= inv);
}

/// Vector-Jacobian product of `softmax_beta`: given output `p` and upstream
/// gradient `g`, writes `beta * p_t * (g_t - <p, g>)` into `out`.
#[inline]
pub fn softmax_beta_vjp(p: &[f64], g: &[f64], beta: f64, out: &mut [f64]) {
    let mean: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, &pt), &gt) in out.iter_mut().zip(p).zip(g) {
        *o = beta * pt * (gt - mean);
    }
}
