use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Linear, LinearCache, Mlp, MlpCache, Module, Param};
use crate::tensor::{broadcast_mean_grad, mean_over_axes, FieldTensor, Matrix};

/// Learnable projection of an n-d field onto each axis: pointwise `gamma`,
/// uniform mean pooling over the other axes, then a pointwise MLP `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxialProjector {
    pub gamma: Vec<Linear>,
    pub h: Vec<Mlp>,
}

#[derive(Debug, Clone)]
pub struct ProjectCache {
    axis: usize,
    gamma: LinearCache,
    h: MlpCache,
}

impl AxialProjector {
    pub fn new(name: &str, axes: usize, width: usize, rng: &mut impl Rng) -> Self {
        let mut gamma = Vec::with_capacity(axes);
        let mut h = Vec::with_capacity(axes);
        for m in 0..axes {
            gamma.push(Linear::new(&format!("{name}.gamma{m}"), width, width, true, rng));
            h.push(Mlp::new(&format!("{name}.h{m}"), [width; 4], rng));
        }
        AxialProjector { gamma, h }
    }

    pub fn axes(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, u: &FieldTensor, axis: usize) -> Result<()> {
        if axis >= self.axes() || axis >= u.ndim() {
            return Err(Error::contract(format!(
                "axial projection onto axis {axis}, but the projector has {} axes and the field {}",
                self.axes(),
                u.ndim()
            )));
        }
        Ok(())
    }

    /// `h(mean_over_axes(gamma(u), axis))`, an `S_axis x d` matrix.
    ///
    /// Pooling is applied before `gamma`; the two commute because `gamma` is affine.
    pub fn project(&self, u: &FieldTensor, axis: usize) -> Result<Matrix> {
        Ok(self.forward(u, axis)?.0)
    }

    pub fn forward(&self, u: &FieldTensor, axis: usize) -> Result<(Matrix, ProjectCache)> {
        self.check(u, axis)?;
        let pooled = mean_over_axes(u, axis)?;
        let (g, gamma) = self.gamma[axis].forward(&pooled)?;
        let (phi, h) = self.h[axis].forward(&g)?;
        Ok((phi, ProjectCache { axis, gamma, h }))
    }

    /// Accumulates parameter gradients and adds the input gradient into `gu`
    /// (`N x d`, one row per grid point).
    pub fn backward(&mut self, spatial: &[usize], cache: &ProjectCache, gphi: &Matrix, gu: &mut Matrix) {
        let m = cache.axis;
        let gg = self.h[m].backward(&cache.h, gphi);
        let gpooled = self.gamma[m].backward(&cache.gamma, &gg);
        broadcast_mean_grad(spatial, m, &gpooled, gu);
    }
}

impl Module for AxialProjector {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        for (g, h) in self.gamma.iter().zip(&self.h) {
            g.visit(f);
            h.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for (g, h) in self.gamma.iter_mut().zip(&mut self.h) {
            g.visit_mut(f);
            h.visit_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{assert_grads_close, dot, fd_input_grad, fd_param_grads, random_field, random_matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_projector(axes: usize, d: usize) -> AxialProjector {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = AxialProjector::new("p", axes, d, &mut rng);
        for g in &mut p.gamma {
            g.w.value = Matrix::identity(d);
        }
        for h in &mut p.h {
            // gelu(x + 40) - 40 is the identity to within 1e-300 for |x| <= 1.
            h.l1.w.value = Matrix::identity(d);
            h.l1.b.as_mut().unwrap().value.fill(40.0);
            h.l2.w.value = Matrix::identity(d);
            h.l2.b.as_mut().unwrap().value.fill(0.0);
            h.l3.w.value = Matrix::identity(d);
            h.l3.b.as_mut().unwrap().value.fill(-40.0);
        }
        p
    }

    #[test]
    fn identity_maps_on_constant_input() {
        let p = identity_projector(2, 3);
        let u = FieldTensor::new(vec![3, 4, 3], [0.25, -0.5, 0.75].repeat(12)).unwrap();
        for axis in 0..2 {
            let phi = p.project(&u, axis).unwrap();
            for r in 0..phi.rows() {
                for (a, b) in phi.row(r).iter().zip(&[0.25, -0.5, 0.75]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pooling_is_a_no_op_for_axis_only_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = AxialProjector::new("p", 2, 4, &mut rng);
        let slice = random_matrix(3, 4, &mut rng);
        // u depends only on axis 0.
        let mut data = Vec::new();
        for i in 0..3 {
            for _ in 0..5 {
                data.extend_from_slice(slice.row(i));
            }
        }
        let u = FieldTensor::new(vec![3, 5, 4], data).unwrap();
        let direct = p.h[0].apply(&p.gamma[0].apply(&slice).unwrap()).unwrap();
        let phi = p.project(&u, 0).unwrap();
        for (a, b) in phi.as_slice().iter().zip(direct.as_slice()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_bad_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = AxialProjector::new("p", 2, 4, &mut rng);
        let u = random_field(&[3, 3, 4], &mut rng);
        assert!(p.project(&u, 2).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = AxialProjector::new("p", 2, 6, &mut rng);
        p.visit_mut(&mut |q| {
            if q.name().ends_with(".b") {
                q.value.as_mut_slice().iter_mut().enumerate().for_each(|(i, v)| *v = 0.05 * i as f64);
            }
        });
        let u = random_field(&[3, 4, 6], &mut rng);
        for axis in 0..2 {
            let probe = random_matrix(u.shape()[axis], 6, &mut rng);
            p.zero_grad();
            let (_, cache) = p.forward(&u, axis).unwrap();
            let mut gu = Matrix::zeros(12, 6);
            p.backward(&[3, 4], &cache, &probe, &mut gu);
            let fd = fd_param_grads(&mut p, 1e-5, |p| dot(&p.project(&u, axis).unwrap(), &probe));
            assert_grads_close(&p.flat_grads(), &fd, 1e-6, "projector params");
            let fd_u = fd_input_grad(&u.to_matrix(), 1e-5, |x| {
                let t = FieldTensor::from_matrix(&[3, 4], x.clone()).unwrap();
                dot(&p.project(&t, axis).unwrap(), &probe)
            });
            assert_grads_close(gu.as_slice(), &fd_u, 1e-6, "projector input");
        }
    }
}
