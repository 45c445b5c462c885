use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Rotary position encoding for a one-dimensional coordinate.
///
/// Row vectors are multiplied on the right by `Theta(x) = diag(R_1(x), ..., R_{d/2}(x))`
/// with `R_l(x) = [[cos a, -sin a], [sin a, cos a]]`, `a = lambda * x * theta_l`,
/// acting on the adjacent channel pairs `(2l, 2l + 1)`. Because
/// `R_l(x_i) R_l(x_j)^T = R_l(x_i - x_j)`, dot products of encoded rows depend
/// only on coordinate differences.
#[derive(Debug, Clone, PartialEq)]
pub struct RopeTable {
    head_dim: usize,
    thetas: Vec<f64>,
    lambda: f64,
}

impl RopeTable {
    pub fn new(head_dim: usize, lambda: f64) -> Result<Self> {
        if head_dim == 0 || head_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "rotary encoding needs an even positive width, got {head_dim}"
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("rotary mesh weight must be positive, got {lambda}")));
        }
        let thetas = (0..head_dim / 2)
            .map(|l| 10000f64.powf(-2.0 * l as f64 / head_dim as f64))
            .collect();
        Ok(RopeTable {
            head_dim,
            thetas,
            lambda,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Rotates one `head_dim`-wide slice in place. `inverse` applies `Theta(x)^T`.
    #[inline]
    pub(crate) fn rotate(&self, v: &mut [f64], x: f64, inverse: bool) {
        debug_assert_eq!(v.len(), self.head_dim);
        for (l, &theta) in self.thetas.iter().enumerate() {
            let (s, c) = (self.lambda * x * theta).sin_cos();
            let s = if inverse { -s } else { s };
            let a = v[2 * l];
            let b = v[2 * l + 1];
            v[2 * l] = a * c + b * s;
            v[2 * l + 1] = -a * s + b * c;
        }
    }

    /// The `d x d` matrix `Theta(x)`.
    pub fn theta_matrix(&self, x: f64) -> Matrix {
        let d = self.head_dim;
        let mut m = Matrix::zeros(d, d);
        for (l, &theta) in self.thetas.iter().enumerate() {
            let (s, c) = (self.lambda * x * theta).sin_cos();
            m.set(2 * l, 2 * l, c);
            m.set(2 * l, 2 * l + 1, -s);
            m.set(2 * l + 1, 2 * l, s);
            m.set(2 * l + 1, 2 * l + 1, c);
        }
        m
    }

    /// Encodes every row `i` of `q` (width `heads * head_dim`) at coordinate
    /// `coords[i]`, head by head.
    pub fn encode(&self, q: &Matrix, coords: &[f64]) -> Result<Matrix> {
        self.check(q, coords)?;
        let mut out = q.clone();
        self.apply_rows(&mut out, coords, false);
        Ok(out)
    }

    /// Backward of [`RopeTable::encode`]: the gradient is rotated back by `Theta(x)^T`.
    pub fn encode_backward(&self, g: &Matrix, coords: &[f64]) -> Matrix {
        let mut out = g.clone();
        self.apply_rows(&mut out, coords, true);
        out
    }

    fn check(&self, q: &Matrix, coords: &[f64]) -> Result<()> {
        if q.cols() % self.head_dim != 0 {
            return Err(Error::Config(format!(
                "rotary width {} does not divide row width {}",
                self.head_dim,
                q.cols()
            )));
        }
        if coords.len() != q.rows() {
            return Err(Error::contract(format!(
                "{} coordinates for {} rows",
                coords.len(),
                q.rows()
            )));
        }
        Ok(())
    }

    pub(crate) fn apply_rows(&self, m: &mut Matrix, coords: &[f64], inverse: bool) {
        let d = self.head_dim;
        for (i, &x) in coords.iter().enumerate() {
            for block in m.row_mut(i).chunks_exact_mut(d) {
                self.rotate(block, x, inverse);
            }
        }
    }
}

/// Rotary encoding over several axes: each head's width is split evenly
/// across the axes and each block is rotated by its own coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisSplitRope {
    tables: Vec<RopeTable>,
    head_dim: usize,
}

impl AxisSplitRope {
    pub fn new(head_dim: usize, axes: usize, lambda: f64) -> Result<Self> {
        if axes == 0 || head_dim % axes != 0 || (head_dim / axes) % 2 != 0 {
            return Err(Error::Config(format!(
                "head width {head_dim} cannot be split into {axes} even rotary blocks"
            )));
        }
        let table = RopeTable::new(head_dim / axes, lambda)?;
        Ok(AxisSplitRope {
            tables: vec![table; axes],
            head_dim,
        })
    }

    /// `coords` is `N x axes`; `q` is `N x (heads * head_dim)`.
    pub fn encode(&self, q: &Matrix, coords: &Matrix) -> Matrix {
        let mut out = q.clone();
        self.apply(&mut out, coords, false);
        out
    }

    pub fn encode_backward(&self, g: &Matrix, coords: &Matrix) -> Matrix {
        let mut out = g.clone();
        self.apply(&mut out, coords, true);
        out
    }

    fn apply(&self, m: &mut Matrix, coords: &Matrix, inverse: bool) {
        let block = self.head_dim / self.tables.len();
        for i in 0..m.rows() {
            let xs = coords.row(i);
            for head in m.row_mut(i).chunks_exact_mut(self.head_dim) {
                for (a, part) in head.chunks_exact_mut(block).enumerate() {
                    self.tables[a].rotate(part, xs[a], inverse);
                }
            }
        }
    }
}
