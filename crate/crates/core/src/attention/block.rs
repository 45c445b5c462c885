use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::factorized::{FactorizedAttention, FactorizedCache};
use super::kernels::AxialKernelSet;
use super::linear::{full_kernel, full_kernel_budget_check, LinearAttention, LinearAttnCache};
use crate::error::{Error, Result};
use crate::nn::{grid_coords, instance_norm, instance_norm_backward, Mlp, MlpCache, Module, NormCache, Param};
use crate::tensor::{FieldTensor, Matrix};

/// Which attention operator a block uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Factorized,
    Linear,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Factorized => "factorized",
            Mechanism::Linear => "linear",
        })
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factorized" => Ok(Mechanism::Factorized),
            "linear" => Ok(Mechanism::Linear),
            other => Err(Error::Config(format!(
                "unknown attention mechanism {other:?}; expected factorized or linear"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Attention {
    Factorized(FactorizedAttention),
    Linear(LinearAttention),
}

#[derive(Debug, Clone)]
pub enum AttentionCache {
    Factorized(FactorizedCache),
    Linear(LinearAttnCache),
}

impl Attention {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mechanism: Mechanism,
        name: &str,
        axes: usize,
        width: usize,
        heads: usize,
        head_dim: usize,
        lambda: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(match mechanism {
            Mechanism::Factorized => {
                Attention::Factorized(FactorizedAttention::new(name, axes, width, heads, head_dim, lambda, rng)?)
            }
            Mechanism::Linear => {
                Attention::Linear(LinearAttention::new(name, axes, width, heads, head_dim, lambda, rng)?)
            }
        })
    }

    pub fn mechanism(&self) -> Mechanism {
        match self {
            Attention::Factorized(_) => Mechanism::Factorized,
            Attention::Linear(_) => Mechanism::Linear,
        }
    }

    pub fn forward(&self, u: &FieldTensor) -> Result<(FieldTensor, AttentionCache)> {
        match self {
            Attention::Factorized(a) => {
                let (z, c) = a.forward(u)?;
                Ok((z, AttentionCache::Factorized(c)))
            }
            Attention::Linear(a) => {
                let spatial = u.spatial_shape();
                let (z, c) = a.forward(&u.to_matrix(), &grid_coords(spatial))?;
                Ok((FieldTensor::from_matrix(spatial, z)?, AttentionCache::Linear(c)))
            }
        }
    }

    pub fn backward(&mut self, cache: &AttentionCache, g: &FieldTensor) -> FieldTensor {
        match (self, cache) {
            (Attention::Factorized(a), AttentionCache::Factorized(c)) => a.backward(c, g),
            (Attention::Linear(a), AttentionCache::Linear(c)) => {
                let gu = a.backward(c, &g.to_matrix());
                FieldTensor::from_matrix(g.spatial_shape(), gu).expect("gradient keeps the field shape")
            }
            _ => panic!("attention cache does not match the attention mechanism"),
        }
    }
}

impl Module for Attention {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        match self {
            Attention::Factorized(a) => a.visit(f),
            Attention::Linear(a) => a.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            Attention::Factorized(a) => a.visit_mut(f),
            Attention::Linear(a) => a.visit_mut(f),
        }
    }
}

/// Residual attention layer `U + f(IN(Att(U)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub attn: Attention,
    pub f: Mlp,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    pub attn: AttentionCache,
    norm: NormCache,
    f: MlpCache,
}

impl AttentionBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mechanism: Mechanism,
        name: &str,
        axes: usize,
        width: usize,
        heads: usize,
        head_dim: usize,
        lambda: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let attn = Attention::new(mechanism, &format!("{name}.attn"), axes, width, heads, head_dim, lambda, rng)?;
        let f = Mlp::new(&format!("{name}.f"), [width; 4], rng);
        Ok(AttentionBlock { attn, f })
    }

    pub fn apply(&self, u: &FieldTensor) -> Result<FieldTensor> {
        Ok(self.forward(u)?.0)
    }

    pub fn forward(&self, u: &FieldTensor) -> Result<(FieldTensor, BlockCache)> {
        let (a, attn) = self.attn.forward(u)?;
        let (normed, norm) = instance_norm(&a)?;
        let (mut y, f) = self.f.forward(&normed.into_matrix())?;
        y.add_assign(&u.to_matrix());
        Ok((FieldTensor::from_matrix(u.spatial_shape(), y)?, BlockCache { attn, norm, f }))
    }

    pub fn backward(&mut self, cache: &BlockCache, g: &FieldTensor) -> FieldTensor {
        let spatial = g.spatial_shape();
        let gn = self.f.backward(&cache.f, &g.to_matrix());
        let gn = FieldTensor::from_matrix(spatial, gn).expect("gradient keeps the field shape");
        let ga = instance_norm_backward(&cache.norm, &gn);
        let mut gu = self.attn.backward(&cache.attn, &ga);
        gu.as_mut_slice().iter_mut().zip(g.as_slice()).for_each(|(a, b)| *a += b);
        gu
    }

    /// Axial kernels for input `u`; `None` for linear attention.
    pub fn kernels(&self, u: &FieldTensor) -> Result<Option<AxialKernelSet>> {
        match &self.attn {
            Attention::Factorized(a) => Ok(Some(a.kernels(u)?)),
            Attention::Linear(_) => Ok(None),
        }
    }

    /// Materialized `N x N` kernel of every head for linear attention;
    /// `None` for factorized attention.
    pub fn full_kernels(&self, u: &FieldTensor) -> Result<Option<Vec<Matrix>>> {
        match &self.attn {
            Attention::Factorized(_) => Ok(None),
            Attention::Linear(a) => {
                let n = u.points();
                full_kernel_budget_check(n)?;
                let (_, cache) = a.forward(&u.to_matrix(), &grid_coords(u.spatial_shape()))?;
                (0..a.heads())
                    .map(|h| full_kernel(cache.encoded_queries(), cache.encoded_keys(), a.heads(), h))
                    .collect::<Result<Vec<_>>>()
                    .map(Some)
            }
        }
    }
}

impl Module for AttentionBlock {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.attn.visit(f);
        self.f.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.attn.visit_mut(f);
        self.f.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{assert_grads_close, dot, fd_input_grad, fd_param_grads, random_field};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_mlp_is_residual_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for mech in [Mechanism::Factorized, Mechanism::Linear] {
            let mut b = AttentionBlock::new(mech, "b", 2, 8, 2, 4, 64.0, &mut rng).unwrap();
            b.f.zero_output_layer();
            let u = random_field(&[4, 4, 8], &mut rng);
            assert_eq!(b.apply(&u).unwrap(), u);
        }
    }

    #[test]
    fn shape_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for shape in [vec![6, 4], vec![3, 5, 4], vec![2, 3, 4, 4]] {
            for mech in [Mechanism::Factorized, Mechanism::Linear] {
                let axes = shape.len() - 1;
                let b = AttentionBlock::new(mech, "b", axes, 4, 2, axes * 2, 64.0, &mut rng).unwrap();
                let u = random_field(&shape, &mut rng);
                assert_eq!(b.apply(&u).unwrap().shape(), u.shape());
            }
        }
    }

    #[test]
    fn mechanism_parses() {
        assert_eq!("linear".parse::<Mechanism>().unwrap(), Mechanism::Linear);
        assert_eq!(Mechanism::Factorized.to_string(), "factorized");
        assert!("softmax".parse::<Mechanism>().is_err());
    }

    #[test]
    fn whole_block_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for mech in [Mechanism::Factorized, Mechanism::Linear] {
            let mut b = AttentionBlock::new(mech, "b", 2, 8, 2, 4, 8.0, &mut rng).unwrap();
            let u = random_field(&[4, 4, 8], &mut rng);
            let probe = random_field(&[4, 4, 8], &mut rng);
            let (_, cache) = b.forward(&u).unwrap();
            b.zero_grad();
            let gu = b.backward(&cache, &probe);
            let loss = |b: &AttentionBlock, u: &FieldTensor| dot(&b.apply(u).unwrap().into_matrix(), &probe.to_matrix());
            let fd = fd_param_grads(&mut b, 1e-5, |b| loss(b, &u));
            let analytic = b.flat_grads();
            let mut off = 0;
            b.visit(&mut |p| {
                let n = p.len();
                assert_grads_close(&analytic[off..off + n], &fd[off..off + n], 1e-4, p.name());
                off += n;
            });
            let fd_u = fd_input_grad(&u.to_matrix(), 1e-5, |x| {
                loss(&b, &FieldTensor::from_matrix(&[4, 4], x.clone()).unwrap())
            });
            assert_grads_close(gu.as_slice(), &fd_u, 1e-4, "block input");
        }
    }
}
