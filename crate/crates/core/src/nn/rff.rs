use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::linear::{Linear, LinearCache};
use super::param::{Module, Param};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Random Fourier feature positional encoding `psi(x) = [cos(xB), sin(xB)] W_out`.
///
/// `B` (`n_dim x n_freq`) is drawn once and never trained; only `W_out` learns.
#[derive(Debug, Clone, PartialEq)]
pub struct RffEncoder {
    pub b: Param,
    pub w_out: Linear,
}

#[derive(Debug, Clone)]
pub struct RffCache {
    linear: LinearCache,
}

impl RffEncoder {
    pub fn new(name: &str, n_dim: usize, n_freq: usize, width: usize, sigma: f64, rng: &mut impl Rng) -> Result<Self> {
        if n_freq == 0 || n_dim == 0 {
            return Err(Error::Config("positional encoding needs at least one frequency and one axis".into()));
        }
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| Error::Config(format!("positional encoding scale {sigma}: {e}")))?;
        let b = Matrix::from_fn(n_dim, n_freq, |_, _| normal.sample(rng));
        Ok(RffEncoder {
            b: Param::frozen(format!("{name}.B"), b),
            w_out: Linear::new(&format!("{name}.out"), 2 * n_freq, width, false, rng),
        })
    }

    pub fn n_dim(&self) -> usize {
        self.b.value.rows()
    }

    pub fn n_freq(&self) -> usize {
        self.b.value.cols()
    }

    pub fn out_width(&self) -> usize {
        self.w_out.out_width()
    }

    /// `[cos(xB), sin(xB)]` for every row of `coords` (`N x n_dim`).
    pub fn features(&self, coords: &Matrix) -> Result<Matrix> {
        if coords.cols() != self.n_dim() {
            return Err(Error::contract(format!(
                "positional encoding built for {}-d coordinates, got {}",
                self.n_dim(),
                coords.cols()
            )));
        }
        let f = self.n_freq();
        let proj = coords.matmul(&self.b.value)?;
        let mut out = Matrix::zeros(coords.rows(), 2 * f);
        for r in 0..coords.rows() {
            let (cos_part, sin_part) = out.row_mut(r).split_at_mut(f);
            for (k, &p) in proj.row(r).iter().enumerate() {
                let (s, c) = p.sin_cos();
                cos_part[k] = c;
                sin_part[k] = s;
            }
        }
        Ok(out)
    }

    pub fn apply(&self, coords: &Matrix) -> Result<Matrix> {
        self.w_out.apply(&self.features(coords)?)
    }

    /// Applies `W_out` to precomputed features.
    pub fn forward_features(&self, features: &Matrix) -> Result<(Matrix, RffCache)> {
        let (y, linear) = self.w_out.forward(features)?;
        Ok((y, RffCache { linear }))
    }

    /// Accumulates the `W_out` gradient; coordinates and `B` receive none.
    pub fn backward(&mut self, cache: &RffCache, gy: &Matrix) {
        self.w_out.backward_params_only(&cache.linear, gy);
    }
}

impl Module for RffEncoder {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.b);
        self.w_out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.b);
        self.w_out.visit_mut(f);
    }
}
