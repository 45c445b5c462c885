use rand::Rng;

use crate::tensor::Matrix;

/// A learnable weight with its gradient accumulator and AdamW moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub m1: Matrix,
    pub m2: Matrix,
    trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let (r, c) = value.shape();
        Param {
            name: name.into(),
            value,
            grad: Matrix::zeros(r, c),
            m1: Matrix::zeros(r, c),
            m2: Matrix::zeros(r, c),
            trainable: true,
        }
    }

    /// A fixed buffer that is saved with the model but never updated.
    pub fn frozen(name: impl Into<String>, value: Matrix) -> Self {
        Param {
            trainable: false,
            ..Param::new(name, value)
        }
    }

    /// Glorot-uniform weights in `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`.
    pub fn glorot(name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let value = Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..=limit));
        Param::new(name, value)
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Param::new(name, Matrix::zeros(rows, cols))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything that owns parameters. Visiting order is fixed and defines the
/// parameter order of checkpoints and flattened views.
pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(&Param));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }

    /// Number of trainable scalars.
    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if p.is_trainable() {
                n += p.len()
            }
        });
        n
    }

    /// All trainable values concatenated in visiting order.
    fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |p| {
            if p.is_trainable() {
                out.extend_from_slice(p.value.as_slice())
            }
        });
        out
    }

    /// All trainable gradients concatenated in visiting order.
    fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |p| {
            if p.is_trainable() {
                out.extend_from_slice(p.grad.as_slice())
            }
        });
        out
    }

    fn set_flat_values(&mut self, values: &[f64]) {
        let mut off = 0;
        self.visit_mut(&mut |p| {
            if p.is_trainable() {
                let n = p.len();
                p.value.as_mut_slice().copy_from_slice(&values[off..off + n]);
                off += n;
            }
        });
        assert_eq!(off, values.len(), "flat parameter vector has the wrong length");
    }
}

impl Module for Param {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(self)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(self)
    }
}

impl<M: Module> Module for Vec<M> {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.iter().for_each(|m| m.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.iter_mut().for_each(|m| m.visit_mut(f));
    }
}

impl<M: Module> Module for Option<M> {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        if let Some(m) = self {
            m.visit(f)
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        if let Some(m) = self {
            m.visit_mut(f)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_bounds_and_determinism() {
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        let p = Param::glorot("w", 8, 24, &mut a);
        let q = Param::glorot("w", 8, 24, &mut b);
        assert_eq!(p, q);
        let limit = (6.0f64 / 32.0).sqrt();
        assert!(p.value.as_slice().iter().all(|v| v.abs() <= limit));
        assert_eq!(p.grad.shape(), p.value.shape());
        assert_eq!(p.m2.shape(), p.value.shape());
    }

    #[test]
    fn frozen_params_are_skipped_in_flat_views() {
        let params = vec![
            Param::new("a", Matrix::filled(1, 2, 1.0)),
            Param::frozen("b", Matrix::filled(1, 3, 2.0)),
        ];
        assert_eq!(params.param_count(), 2);
        assert_eq!(params.flat_values(), vec![1.0, 1.0]);
    }
}
