//! Minimal dense row-major matrices and the handful of kernels the models need.
//!
//! Every kernel computes each output row independently of the others and
//! accumulates in a fixed order, so a row's result is bit-identical whether it
//! is computed alone or as part of a larger batch.

use std::ops::{Index, IndexMut};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer has wrong length");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Gathers the given rows into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(rows.len(), self.cols);
        for (dst, &src) in rows.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Dot product with four interleaved partial sums, reduced in a fixed order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out_row = x_row · Wᵀ + bias` for a single row, `w` being `out × in`.
pub fn linear_row(x: &[f64], w: &Matrix, bias: Option<&[f64]>, out: &mut [f64]) {
    debug_assert_eq!(x.len(), w.cols());
    debug_assert_eq!(out.len(), w.rows());
    for (o, slot) in out.iter_mut().enumerate() {
        let mut v = dot(x, w.row(o));
        if let Some(b) = bias {
            v += b[o];
        }
        *slot = v;
    }
}

/// `X · Wᵀ (+ bias)`, `w` being `out × in`.
pub fn linear(x: &Matrix, w: &Matrix, bias: Option<&[f64]>) -> Matrix {
    assert_eq!(x.cols(), w.cols(), "linear: input width mismatch");
    let mut out = Matrix::zeros(x.rows(), w.rows());
    for r in 0..x.rows() {
        let (xr, or) = (x.row(r), &mut out.data[r * w.rows..(r + 1) * w.rows]);
        linear_row(xr, w, bias, or);
    }
    out
}

/// Backward of [`linear`]: accumulates `dW += dYᵀ X`, `db += Σ dY` and returns `dX = dY W`.
pub fn linear_backward(
    x: &Matrix,
    w: &Matrix,
    dy: &Matrix,
    dw: &mut Matrix,
    db: Option<&mut [f64]>,
    want_dx: bool,
) -> Option<Matrix> {
    assert_eq!(dy.cols(), w.rows());
    for r in 0..x.rows() {
        let (xr, dyr) = (x.row(r), dy.row(r));
        for (o, &g) in dyr.iter().enumerate() {
            if g != 0.0 {
                axpy(g, xr, dw.row_mut(o));
            }
        }
    }
    if let Some(db) = db {
        for r in 0..dy.rows() {
            for (b, g) in db.iter_mut().zip(dy.row(r)) {
                *b += g;
            }
        }
    }
    if !want_dx {
        return None;
    }
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    for r in 0..dy.rows() {
        let dyr = dy.row(r);
        let dxr = dx.row_mut(r);
        for (o, &g) in dyr.iter().enumerate() {
            if g != 0.0 {
                axpy(g, w.row(o), dxr);
            }
        }
    }
    Some(dx)
}

/// `Aᵀ · B` for `A: m × p`, `B: m × q`.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.rows(), b.rows());
    let mut out = Matrix::zeros(a.cols(), b.cols());
    for r in 0..a.rows() {
        let (ar, br) = (a.row(r), b.row(r));
        for (i, &v) in ar.iter().enumerate() {
            if v != 0.0 {
                axpy(v, br, out.row_mut(i));
            }
        }
    }
    out
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &l in logits {
        sum += (l - max).exp();
    }
    let lse = max + sum.ln();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = l - lse;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_linear(x: &Matrix, w: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), w.rows());
        for r in 0..x.rows() {
            for o in 0..w.rows() {
                out[(r, o)] = (0..x.cols()).map(|i| x[(r, i)] * w[(o, i)]).sum();
            }
        }
        out
    }

    #[test]
    fn linear_matches_naive() {
        let x = Matrix::from_vec(3, 5, (0..15).map(|v| v as f64 * 0.3 - 2.0).collect());
        let w = Matrix::from_vec(4, 5, (0..20).map(|v| (v as f64).sin()).collect());
        let fast = linear(&x, &w, None);
        let slow = naive_linear(&x, &w);
        for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_rows_are_batch_independent() {
        let x = Matrix::from_vec(3, 7, (0..21).map(|v| (v as f64 * 1.7).cos()).collect());
        let w = Matrix::from_vec(2, 7, (0..14).map(|v| (v as f64 * 0.9).sin()).collect());
        let batch = linear(&x, &w, None);
        let mut single = [0.0; 2];
        linear_row(x.row(1), &w, None, &mut single);
        assert_eq!(batch.row(1), &single);
    }

    #[test]
    fn log_softmax_normalizes() {
        let mut out = [0.0; 4];
        log_softmax(&[1.0, 2.0, 3.0, 1000.0], &mut out);
        let total: f64 = out.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matmul_tn_matches_naive() {
        let a = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let c = matmul_tn(&a, &b);
        assert_eq!(c.as_slice(), &[6.0, 8.0, 8.0, 10.0]);
    }
}
