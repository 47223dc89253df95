//! Small dense row-major matrices.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::num;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn<F: FnMut(usize, usize) -> f64>(rows: usize, cols: usize, mut f: F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(alloc::format!(
                "{} entries for a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Reshapes to `rows x cols`, reallocating only if the shape changes.
    pub fn ensure_shape(&mut self, rows: usize, cols: usize) {
        if self.rows != rows || self.cols != cols {
            *self = Self::zeros(rows, cols);
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn diag(d: &[f64]) -> Self {
        Self::from_fn(d.len(), d.len(), |i, j| if i == j { d[i] } else { 0.0 })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Mat) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius(&self) -> f64 {
        num::sqrt(self.frobenius_sq())
    }

    /// `<self, other>_F`.
    pub fn dot(&self, other: &Mat) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.rows) {
            *yi = dot(self.row(i), x);
        }
    }

    /// `y = self^T x`.
    pub fn matvec_t(&self, x: &[f64], y: &mut [f64]) {
        for v in y.iter_mut() {
            *v = 0.0;
        }
        for i in 0..self.rows {
            let xi = x[i];
            for (yj, a) in y.iter_mut().zip(self.row(i)) {
                *yj += xi * a;
            }
        }
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        let mut c = Mat::zeros(self.rows, other.cols);
        gemm(1.0, self, false, other, false, 0.0, &mut c);
        c
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, &v| a.max(num::abs(v)))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest singular value by power iteration on `A^T A`.
    pub fn op_norm(&self) -> f64 {
        op_norm(self, 1e-8, 1000)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    num::sqrt(dot(a, a))
}

/// `c = alpha op(a) op(b) + beta c`, with `op` an optional transpose.
pub fn gemm(alpha: f64, a: &Mat, ta: bool, b: &Mat, tb: bool, beta: f64, c: &mut Mat) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert!(k == k2 && c.rows == m && c.cols == n, "gemm shape mismatch");
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.scale(beta);
        return;
    }
    // SAFETY: shapes are checked above and the strides describe the
    // row-major buffers of `a`, `b` and `c`, which do not alias.
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

/// Largest singular value of `a`, power iteration on `a^T a`.
pub fn op_norm(a: &Mat, tol: f64, max_iter: usize) -> f64 {
    if a.rows == 0 || a.cols == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..a.cols).map(|j| 1.0 + 0.01 * (j % 7) as f64).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut u = vec![0.0; a.rows];
    let mut w = vec![0.0; a.cols];
    let mut prev = 0.0;
    for _ in 0..max_iter {
        a.matvec(&v, &mut u);
        a.matvec_t(&u, &mut w);
        let lam = norm2(&w);
        if lam == 0.0 {
            return 0.0;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / lam;
        }
        if num::abs(lam - prev) <= tol * lam {
            return num::sqrt(lam);
        }
        prev = lam;
    }
    num::sqrt(prev)
}

/// Perron root of an entrywise nonnegative square matrix.
///
/// Power iteration on `m + I`, which shares the Perron vector and is
/// primitive whenever `m` is irreducible. Errors if the Rayleigh-type
/// bounds have not met after `max_iter` iterations.
pub fn perron_root(m: &Mat, tol: f64, max_iter: usize) -> Result<(f64, Vec<f64>)> {
    let start: Vec<f64> = (0..m.rows).map(|i| 1.0 + 1e-3 * ((i * 7919) % 13) as f64).collect();
    perron_root_from(m, start, tol, max_iter)
}

/// As [`perron_root`] from a given strictly positive start vector.
pub fn perron_root_from(m: &Mat, start: Vec<f64>, tol: f64, max_iter: usize) -> Result<(f64, Vec<f64>)> {
    let n = m.rows;
    if n != m.cols || start.len() != n {
        return Err(Error::ShapeMismatch(alloc::format!(
            "{}x{} matrix with a start vector of length {}",
            m.rows,
            m.cols,
            start.len()
        )));
    }
    if n == 0 {
        return Ok((0.0, Vec::new()));
    }
    let mut v = start;
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    let mut w = vec![0.0; n];
    for _ in 0..max_iter {
        m.matvec(&v, &mut w);
        // Collatz–Wielandt bounds on the shifted matrix.
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for i in 0..n {
            let r = (w[i] + v[i]) / v[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        let s: f64 = w.iter().zip(&v).map(|(a, b)| a + b).sum();
        if s == 0.0 {
            return Ok((0.0, v));
        }
        for i in 0..n {
            v[i] = (w[i] + v[i]) / s;
        }
        if hi - lo <= tol * hi.max(1e-300) {
            let rho = 0.5 * (lo + hi) - 1.0;
            return Ok((rho.max(0.0), v));
        }
        if v.iter().any(|&x| x <= 0.0) {
            // Reducible: fall back to a norm-ratio estimate.
            m.matvec(&v, &mut w);
            let a = norm2(&w);
            let b = norm2(&v);
            let vv = dot(&v, &v);
            let r = dot(&w, &v) / vv;
            if num::abs(a / b - r) <= tol * r.max(1e-300) {
                return Ok((r, v));
            }
        }
    }
    Err(Error::PowerIterationStall)
}
