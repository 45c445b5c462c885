use rand::Rng;

use super::param::{Module, Param};
use crate::error::{Error, Result};
use crate::tensor::{matmul_nt, matmul_tn_acc, matmul_unchecked, Matrix};

/// Pointwise affine map `y = x W (+ b)` applied to every row of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Param,
    pub b: Option<Param>,
}

/// Saved input of a [`Linear`] forward pass.
#[derive(Debug, Clone)]
pub struct LinearCache {
    x: Matrix,
}

impl Linear {
    pub fn new(name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        Linear {
            w: Param::glorot(format!("{name}.w"), fan_in, fan_out, rng),
            b: bias.then(|| Param::zeros(format!("{name}.b"), 1, fan_out)),
        }
    }

    pub fn from_weights(name: &str, w: Matrix, b: Option<Matrix>) -> Self {
        Linear {
            w: Param::new(format!("{name}.w"), w),
            b: b.map(|b| Param::new(format!("{name}.b"), b)),
        }
    }

    pub fn in_width(&self) -> usize {
        self.w.value.rows()
    }

    pub fn out_width(&self) -> usize {
        self.w.value.cols()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_width() {
            return Err(Error::contract(format!(
                "linear layer {} expects width {}, got {}",
                self.w.name(),
                self.in_width(),
                x.cols()
            )));
        }
        let mut y = matmul_unchecked(x, &self.w.value);
        if let Some(b) = &self.b {
            let bias = b.value.as_slice();
            for r in 0..y.rows() {
                y.row_mut(r).iter_mut().zip(bias).for_each(|(v, bv)| *v += bv);
            }
        }
        Ok(y)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, LinearCache)> {
        let y = self.apply(x)?;
        Ok((y, LinearCache { x: x.clone() }))
    }

    /// Accumulates `dW = x^T gy` (and `db`) and returns `gx = gy W^T`.
    pub fn backward(&mut self, cache: &LinearCache, gy: &Matrix) -> Matrix {
        self.accumulate_param_grads(cache, gy);
        matmul_nt(gy, &self.w.value)
    }

    /// Like [`Linear::backward`] but skips the input gradient.
    pub fn backward_params_only(&mut self, cache: &LinearCache, gy: &Matrix) {
        self.accumulate_param_grads(cache, gy);
    }

    fn accumulate_param_grads(&mut self, cache: &LinearCache, gy: &Matrix) {
        debug_assert_eq!(gy.cols(), self.out_width());
        debug_assert_eq!(gy.rows(), cache.x.rows());
        if self.w.is_trainable() {
            matmul_tn_acc(&cache.x, gy, &mut self.w.grad);
        }
        if let Some(b) = &mut self.b {
            let g = b.grad.as_mut_slice();
            for r in 0..gy.rows() {
                g.iter_mut().zip(gy.row(r)).for_each(|(a, v)| *a += v);
            }
        }
    }
}

impl Module for Linear {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.w);
        if let Some(b) = &self.b {
            f(b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w);
        if let Some(b) = &mut self.b {
            f(b);
        }
    }
}
