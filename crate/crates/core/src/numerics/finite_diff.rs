// SPDX-License-Identifier: Apache-2.0

//! Central-difference gradient oracle.

/// Default probe step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor used by [`relative_error`]; entries smaller than this
/// are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// Central differences of `f` at `x` with step `h`.
pub fn central_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, REL_FLOOR)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_gradient() {
        let g = central_gradient(|v| v[0].powi(3) + 2.0 * v[1], &[2.0, 5.0], FD_STEP);
        assert!(relative_error(&g, &[12.0, 2.0]) < 1e-8);
    }
}
