use crate::error::{Error, Result};
use crate::nn::Module;

/// AdamW with decoupled weight decay. Moments live on each [`crate::nn::Param`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW::new(0.9, 0.999, 1e-8, 1e-4).unwrap()
    }
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Result<Self> {
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(eps > 0.0) || !(weight_decay >= 0.0) || !eps.is_finite() || !weight_decay.is_finite() {
            return Err(Error::Config(format!(
                "eps must be positive and weight decay non-negative, got {eps} and {weight_decay}"
            )));
        }
        Ok(AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every trainable parameter, then zeroes the gradients.
    /// A non-finite gradient aborts before anything is modified.
    pub fn step(&mut self, model: &mut dyn Module, lr: f64) -> Result<()> {
        let mut bad = None;
        model.visit(&mut |p| {
            if bad.is_none() && p.is_trainable() && !p.grad.is_finite() {
                bad = Some(p.name().to_string());
            }
        });
        if let Some(name) = bad {
            return Err(Error::Divergence {
                iter: self.step as usize,
                detail: format!("non-finite gradient in {name}"),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        model.visit_mut(&mut |p| {
            if !p.is_trainable() {
                return;
            }
            let n = p.value.len();
            let (value, grad) = (p.value.as_mut_slice(), p.grad.as_slice());
            let (m1, m2) = (p.m1.as_mut_slice(), p.m2.as_mut_slice());
            for i in 0..n {
                let g = grad[i];
                m1[i] = b1 * m1[i] + (1.0 - b1) * g;
                m2[i] = b2 * m2[i] + (1.0 - b2) * g * g;
                let mhat = m1[i] / c1;
                let vhat = m2[i] / c2;
                value[i] -= lr * (mhat / (vhat.sqrt() + eps) + wd * value[i]);
            }
            p.zero_grad();
        });
        Ok(())
    }
}

/// Scales all trainable gradients so their global L2 norm is at most
/// `max_norm`. Returns the norm before scaling.
pub fn clip_grad_norm(model: &mut dyn Module, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    model.visit(&mut |p| {
        if p.is_trainable() {
            sq += p.grad.as_slice().iter().map(|g| g * g).sum::<f64>();
        }
    });
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        model.visit_mut(&mut |p| {
            if p.is_trainable() {
                p.grad.scale(s);
            }
        });
    }
    norm
}

/// Multiplies every trainable gradient by `s`.
pub fn scale_grads(model: &mut dyn Module, s: f64) {
    model.visit_mut(&mut |p| {
        if p.is_trainable() {
            p.grad.scale(s);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;
    use crate::tensor::Matrix;

    struct Bowl {
        p: Param,
        curv: Vec<f64>,
    }

    impl Module for Bowl {
        fn visit(&self, f: &mut dyn FnMut(&Param)) {
            f(&self.p)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
            f(&mut self.p)
        }
    }

    impl Bowl {
        fn new(theta: Vec<f64>, curv: Vec<f64>) -> Self {
            let n = theta.len();
            Bowl {
                p: Param::new("theta", Matrix::from_vec(1, n, theta).unwrap()),
                curv,
            }
        }

        // f = 0.5 * sum a_i theta_i^2
        fn fill_grad(&mut self) {
            for i in 0..self.curv.len() {
                let v = self.p.value.as_slice()[i];
                self.p.grad.as_mut_slice()[i] = self.curv[i] * v;
            }
        }
    }

    /// Independent scalar AdamW on one coordinate of the bowl.
    fn scalar_reference(mut theta: f64, a: f64, lr: f64, wd: f64, steps: usize) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        let mut out = Vec::new();
        for t in 1..=steps {
            let g = a * theta;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            theta = theta - lr * (mh / (vh.sqrt() + eps) + wd * theta);
            out.push(theta);
        }
        out
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut bowl = Bowl::new(vec![1.0, -2.0], vec![1.0, 1.0]);
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.0).unwrap();
        opt.step(&mut bowl, 0.1).unwrap();
        assert_eq!(bowl.p.value.as_slice(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let mut bowl = Bowl::new(vec![1.0], vec![1.0]);
        bowl.p.grad.as_mut_slice()[0] = 1.0;
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.0).unwrap();
        opt.step(&mut bowl, 0.1).unwrap();
        let expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((bowl.p.value.as_slice()[0] - expected).abs() <= 1e-15);
        assert_eq!(bowl.p.grad.as_slice(), &[0.0]);
    }

    #[test]
    fn matches_scalar_reference_over_100_steps() {
        let theta0 = vec![1.5, -0.7, 3.0];
        let curv = vec![1.0, 4.0, 0.25];
        let (lr, wd) = (0.05, 1e-2);
        let mut bowl = Bowl::new(theta0.clone(), curv.clone());
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, wd).unwrap();
        let refs: Vec<Vec<f64>> = (0..3).map(|i| scalar_reference(theta0[i], curv[i], lr, wd, 100)).collect();
        for step in 0..100 {
            bowl.fill_grad();
            opt.step(&mut bowl, lr).unwrap();
            for i in 0..3 {
                assert!((bowl.p.value.as_slice()[i] - refs[i][step]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut bowl = Bowl::new(vec![1.0, 2.0], vec![1.0, 1.0]);
        bowl.p.grad.as_mut_slice()[1] = f64::NAN;
        let err = AdamW::default().step(&mut bowl, 0.1).unwrap_err();
        assert!(matches!(&err, Error::Divergence { detail, .. } if detail.contains("theta")));
        assert_eq!(bowl.p.value.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn invalid_betas_rejected() {
        assert!(AdamW::new(1.0, 0.999, 1e-8, 0.0).is_err());
        assert!(AdamW::new(0.9, 0.0, 1e-8, 0.0).is_err());
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut bowl = Bowl::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        bowl.p.grad.as_mut_slice().copy_from_slice(&[3.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut bowl, 1.0), 5.0);
        let g = bowl.p.grad.as_slice();
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        assert!((clip_grad_norm(&mut bowl, 1.0) - 1.0).abs() < 1e-15);
        assert!((bowl.p.grad.as_slice()[0] - 0.6).abs() < 1e-15);
    }
}
