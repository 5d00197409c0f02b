// SPDX-License-Identifier: Apache-2.0

//! Dense row-major `f64` matrices.
//!
//! Products go through `matrixmultiply::dgemm`, so transposed operands are
//! handled by stride swaps rather than copies.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Whether an operand of [`Matrix::gemm_into`] is read transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            ));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(invalid!("matrix entry {bad} is not finite"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid!("ragged rows"));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn column(v: Vec<f64>) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v,
        }
    }

    pub fn row_vector(v: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: v.len(),
            data: v,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// Transposed matrix-vector product `selfᵀ x`.
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr != 0.0 {
                axpy_slice(&mut out, xr, self.row(r));
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(invalid!(
                "matmul shape mismatch: {:?} x {:?}",
                self.shape(),
                other.shape()
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        Matrix::gemm_into(1.0, self, Trans::No, other, Trans::No, 0.0, &mut out);
        Ok(out)
    }

    /// `c = alpha * op(a) * op(b) + beta * c`. Shapes are checked with debug
    /// assertions only; callers validate at their own boundaries.
    pub fn gemm_into(alpha: f64, a: &Matrix, ta: Trans, b: &Matrix, tb: Trans, beta: f64, c: &mut Matrix) {
        let (m, k, rsa, csa) = match ta {
            Trans::No => (a.rows, a.cols, a.cols as isize, 1),
            Trans::Yes => (a.cols, a.rows, 1, a.cols as isize),
        };
        let (kb, n, rsb, csb) = match tb {
            Trans::No => (b.rows, b.cols, b.cols as isize, 1),
            Trans::Yes => (b.cols, b.rows, 1, b.cols as isize),
        };
        assert_eq!(k, kb, "gemm inner dimension mismatch");
        assert_eq!((c.rows, c.cols), (m, n), "gemm output shape mismatch");
        if m == 0 || n == 0 {
            return;
        }
        if k == 0 {
            c.scale_in_place(beta);
            return;
        }
        // SAFETY: strides and extents describe the owned buffers exactly.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.data.as_ptr(),
                rsa,
                csa,
                b.data.as_ptr(),
                rsb,
                csb,
                beta,
                c.data.as_mut_ptr(),
                c.cols as isize,
                1,
            );
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`.
#[inline]
pub fn axpy_slice(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (a, b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |r, c| {
            (0..a.cols()).map(|k| a[(r, k)] * b[(k, c)]).sum()
        })
    }

    #[test]
    fn gemm_transpose_variants_agree_with_naive() {
        let a = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.5 - 2.0);
        let b = Matrix::from_fn(4, 2, |r, c| (r as f64 - c as f64) * 0.25);
        let expect = naive(&a, &b);
        assert_eq!(a.matmul(&b).unwrap(), expect);

        let at = a.transpose();
        let bt = b.transpose();
        let mut out = Matrix::zeros(3, 2);
        Matrix::gemm_into(1.0, &at, Trans::Yes, &bt, Trans::Yes, 0.0, &mut out);
        for (x, y) in out.as_slice().iter().zip(expect.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_shapes_and_nan() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        let a = Matrix::zeros(2, 3);
        assert!(a.matmul(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn matvec_t_matches_transpose() {
        let a = Matrix::from_fn(3, 2, |r, c| (r + 2 * c) as f64);
        let x = [1.0, -1.0, 2.0];
        assert_eq!(a.matvec_t(&x), a.transpose().matvec(&x));
    }
}
