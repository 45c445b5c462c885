use crate::counters::{self, Counter};
use crate::error::{Error, Result};

/// Dense row-major `f64` matrix.
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

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from external data, rejecting bad lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::contract(format!(
                "matrix extents must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::contract(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{rows}x{cols} matrix")));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Internal constructor for buffers produced by our own kernels.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Matrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
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

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Matrix::from_raw(self.cols, self.rows, out)
    }

    /// `self * other`, summing in ascending inner index.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::contract(format!(
                "matmul inner extents differ: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(matmul_unchecked(self, other))
    }

    /// Columns `[start, start + width)` as a new matrix.
    pub fn col_block(&self, start: usize, width: usize) -> Matrix {
        let mut out = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            out.extend_from_slice(&self.row(r)[start..start + width]);
        }
        Matrix::from_raw(self.rows, width, out)
    }

    /// Writes `block` into columns starting at `start`.
    pub fn set_col_block(&mut self, start: usize, block: &Matrix) {
        let w = block.cols;
        for r in 0..self.rows {
            self.row_mut(r)[start..start + w].copy_from_slice(block.row(r));
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> Matrix {
        let mut m = self.clone();
        m.scale(alpha);
        m
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += alpha * b);
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Free-function form of [`Matrix::matmul`].
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

pub fn transpose(a: &Matrix) -> Matrix {
    a.transpose()
}

/// `a * b` without the extent check. Every output element accumulates its
/// products in ascending inner index; rows are processed four at a time so
/// each row of `b` is loaded once per block.
pub(crate) fn matmul_unchecked(a: &Matrix, b: &Matrix) -> Matrix {
    let mut c = Matrix::zeros(a.rows, b.cols);
    matmul_acc(a, b, &mut c);
    c
}

/// `c += a * b`.
pub(crate) fn matmul_acc(a: &Matrix, b: &Matrix, c: &mut Matrix) {
    matmul_acc_as(a, b, c, Counter::Dense);
}

/// `c += a * b`, charging the multiply-adds to `counter`.
pub(crate) fn matmul_acc_as(a: &Matrix, b: &Matrix, c: &mut Matrix, counter: Counter) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    debug_assert_eq!(b.rows, k);
    debug_assert_eq!(c.shape(), (m, n));
    counters::add(counter, (m * k * n) as u64);
    let ad = &a.data;
    let bd = &b.data;
    let cd = &mut c.data;
    let mut i = 0;
    while i + 4 <= m {
        let (c0, rest) = cd[i * n..(i + 4) * n].split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        for p in 0..k {
            let a0 = ad[i * k + p];
            let a1 = ad[(i + 1) * k + p];
            let a2 = ad[(i + 2) * k + p];
            let a3 = ad[(i + 3) * k + p];
            let br = &bd[p * n..(p + 1) * n];
            for j in 0..n {
                let bv = br[j];
                c0[j] += a0 * bv;
                c1[j] += a1 * bv;
                c2[j] += a2 * bv;
                c3[j] += a3 * bv;
            }
        }
        i += 4;
    }
    while i < m {
        let cr = &mut cd[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            let br = &bd[p * n..(p + 1) * n];
            for (cv, bv) in cr.iter_mut().zip(br) {
                *cv += av * bv;
            }
        }
        i += 1;
    }
}

/// `c += a^T * b` for `a: m x k`, `b: m x n`; sums over rows in ascending order.
pub(crate) fn matmul_tn_acc(a: &Matrix, b: &Matrix, c: &mut Matrix) {
    matmul_tn_acc_as(a, b, c, Counter::Dense);
}

/// `c += a^T * b`, charging the multiply-adds to `counter`.
pub(crate) fn matmul_tn_acc_as(a: &Matrix, b: &Matrix, c: &mut Matrix, counter: Counter) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    debug_assert_eq!(b.rows, m);
    debug_assert_eq!(c.shape(), (k, n));
    counters::add(counter, (m * k * n) as u64);
    let cd = &mut c.data;
    for r in 0..m {
        let ar = &a.data[r * k..(r + 1) * k];
        let br = &b.data[r * n..(r + 1) * n];
        for (i, &av) in ar.iter().enumerate() {
            let cr = &mut cd[i * n..(i + 1) * n];
            for (cv, bv) in cr.iter_mut().zip(br) {
                *cv += av * bv;
            }
        }
    }
}

/// `a * b^T`.
pub(crate) fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    matmul_unchecked(a, &b.transpose())
}
