use rand::Rng;

use super::linear::{Linear, LinearCache};
use super::param::{Module, Param};
use crate::error::Result;
use crate::tensor::Matrix;

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x * Phi(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

/// `d/dx gelu(x) = Phi(x) + x * phi(x)`.
#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Three linear layers with GELU between them, applied pointwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    c1: LinearCache,
    pre1: Matrix,
    c2: LinearCache,
    pre2: Matrix,
    c3: LinearCache,
}

fn gelu_matrix(pre: &Matrix) -> Matrix {
    let mut out = pre.clone();
    out.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
    out
}

fn gelu_backward(pre: &Matrix, g: &mut Matrix) {
    g.as_mut_slice()
        .iter_mut()
        .zip(pre.as_slice())
        .for_each(|(gv, &x)| *gv *= gelu_grad(x));
}

impl Mlp {
    pub fn new(name: &str, widths: [usize; 4], rng: &mut impl Rng) -> Self {
        Mlp {
            l1: Linear::new(&format!("{name}.l1"), widths[0], widths[1], true, rng),
            l2: Linear::new(&format!("{name}.l2"), widths[1], widths[2], true, rng),
            l3: Linear::new(&format!("{name}.l3"), widths[2], widths[3], true, rng),
        }
    }

    pub fn in_width(&self) -> usize {
        self.l1.in_width()
    }

    pub fn out_width(&self) -> usize {
        self.l3.out_width()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let h1 = gelu_matrix(&self.l1.apply(x)?);
        let h2 = gelu_matrix(&self.l2.apply(&h1)?);
        self.l3.apply(&h2)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        let (pre1, c1) = self.l1.forward(x)?;
        let (pre2, c2) = self.l2.forward(&gelu_matrix(&pre1))?;
        let (y, c3) = self.l3.forward(&gelu_matrix(&pre2))?;
        Ok((
            y,
            MlpCache {
                c1,
                pre1,
                c2,
                pre2,
                c3,
            },
        ))
    }

    pub fn backward(&mut self, cache: &MlpCache, gy: &Matrix) -> Matrix {
        let mut g2 = self.l3.backward(&cache.c3, gy);
        gelu_backward(&cache.pre2, &mut g2);
        let mut g1 = self.l2.backward(&cache.c2, &g2);
        gelu_backward(&cache.pre1, &mut g1);
        self.l1.backward(&cache.c1, &g1)
    }

    /// Zeroes the output layer so the MLP computes the zero map.
    pub fn zero_output_layer(&mut self) {
        self.l3.w.value.fill(0.0);
        if let Some(b) = &mut self.l3.b {
            b.value.fill(0.0);
        }
    }
}

impl Module for Mlp {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.l1.visit(f);
        self.l2.visit(f);
        self.l3.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.l1.visit_mut(f);
        self.l2.visit_mut(f);
        self.l3.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{assert_grads_close, dot, fd_input_grad, fd_param_grads, random_matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gelu_limits() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() <= 1e-8);
        assert!(gelu(-10.0).abs() <= 1e-8);
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mlp = Mlp::new("m", [4, 6, 6, 3], &mut rng);
        mlp.visit_mut(&mut |p| p.value.fill(0.0));
        let y = mlp.apply(&random_matrix(5, 4, &mut rng)).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(2, 8, &mut rng);
        let probe = random_matrix(2, 8, &mut rng);
        let mut mlp = Mlp::new("m", [8, 16, 16, 8], &mut rng);
        // Nonzero biases exercise the bias gradients too.
        mlp.visit_mut(&mut |p| {
            if p.name().ends_with(".b") {
                p.value.as_mut_slice().iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * (i as f64).sin());
            }
        });
        let (_, cache) = mlp.forward(&x).unwrap();
        mlp.zero_grad();
        let gx = mlp.backward(&cache, &probe);
        let fd = fd_param_grads(&mut mlp, 1e-5, |m| dot(&m.apply(&x).unwrap(), &probe));
        assert_grads_close(&mlp.flat_grads(), &fd, 1e-6, "mlp params");
        let fd_x = fd_input_grad(&x, 1e-5, |x| dot(&mlp.apply(x).unwrap(), &probe));
        assert_grads_close(gx.as_slice(), &fd_x, 1e-6, "mlp input");
    }
}
