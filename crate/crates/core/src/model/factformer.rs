use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::FactFormerConfig;
use crate::attention::{AttentionBlock, BlockCache};
use crate::error::{Error, Result};
use crate::nn::{grid_coords, Linear, LinearCache, Mlp, MlpCache, Module, Param, RffCache, RffEncoder};
use crate::tensor::{FieldTensor, Matrix};

/// Encoder, positional encoding, attention stack, latent propagator and decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FactFormer {
    config: FactFormerConfig,
    pub encoder: Linear,
    pub pos: Vec<RffEncoder>,
    pub blocks: Vec<AttentionBlock>,
    pub propagator: Mlp,
    pub decoder: Mlp,
}

#[derive(Debug, Clone)]
struct LayerCache {
    pos: RffCache,
    block: BlockCache,
}

#[derive(Debug, Clone)]
struct MarchCache {
    propagator: MlpCache,
    decoder: MlpCache,
}

/// Everything [`FactFormer::backward`] needs from one forward call.
#[derive(Debug, Clone)]
pub struct ModelCache {
    encoder: LinearCache,
    layers: Vec<LayerCache>,
    marches: Vec<MarchCache>,
}

impl ModelCache {
    /// Number of frames the forward call produced.
    pub fn steps(&self) -> usize {
        self.marches.len()
    }

    /// Cached input of each attention block.
    pub fn block_caches(&self) -> impl Iterator<Item = &BlockCache> {
        self.layers.iter().map(|l| &l.block)
    }
}

/// `[z, tau]`: the latent state with the march time appended as a channel.
fn with_time(z: &Matrix, tau: f64) -> Matrix {
    let (n, d) = z.shape();
    let mut out = Matrix::zeros(n, d + 1);
    for r in 0..n {
        let row = out.row_mut(r);
        row[..d].copy_from_slice(z.row(r));
        row[d] = tau;
    }
    out
}

impl FactFormer {
    pub fn new(config: FactFormerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.width;
        let n = config.axes();
        let encoder = Linear::new("encoder", config.context * config.in_channels, d, true, &mut rng);
        let n_pos = if config.shared_pos_encoding { 1 } else { config.depth };
        let pos = (0..n_pos)
            .map(|i| RffEncoder::new(&format!("pos{i}"), n, d / 2, d, config.rff_sigma, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let blocks = (0..config.depth)
            .map(|l| {
                AttentionBlock::new(
                    config.mechanism,
                    &format!("block{l}"),
                    n,
                    d,
                    config.heads,
                    config.head_dim,
                    config.lambda,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let propagator = Mlp::new("propagator", [d + 1, d, d, d], &mut rng);
        let decoder = Mlp::new("decoder", [d, d, d, config.in_channels], &mut rng);
        Ok(FactFormer {
            config,
            encoder,
            pos,
            blocks,
            propagator,
            decoder,
        })
    }

    pub fn config(&self) -> &FactFormerConfig {
        &self.config
    }

    fn pos_index(&self, layer: usize) -> usize {
        if self.config.shared_pos_encoding {
            0
        } else {
            layer
        }
    }

    fn check_frames(&self, frames: &[FieldTensor]) -> Result<()> {
        if frames.len() != self.config.context {
            return Err(Error::contract(format!(
                "model expects {} context frames, got {}",
                self.config.context,
                frames.len()
            )));
        }
        let want = self.config.frame_shape();
        if let Some(f) = frames.iter().find(|f| f.shape() != want.as_slice()) {
            return Err(Error::contract(format!(
                "frame shape {:?} does not match the configured {:?}",
                f.shape(),
                want
            )));
        }
        Ok(())
    }

    /// Stacks the context frames channel-wise: feature `t * c + ch` of each point.
    fn stack(&self, frames: &[FieldTensor]) -> Matrix {
        let c = self.config.in_channels;
        let t_in = frames.len();
        let n = self.config.points();
        let mut x = Matrix::zeros(n, t_in * c);
        for (t, f) in frames.iter().enumerate() {
            let src = f.as_slice();
            for p in 0..n {
                x.row_mut(p)[t * c..(t + 1) * c].copy_from_slice(&src[p * c..(p + 1) * c]);
            }
        }
        x
    }

    /// Pointwise temporal compression of the context into a latent field.
    pub fn encode(&self, frames: &[FieldTensor]) -> Result<FieldTensor> {
        self.check_frames(frames)?;
        FieldTensor::from_matrix(&self.config.grid, self.encoder.apply(&self.stack(frames))?)
    }

    /// `z + eps([z, step / k])`.
    pub fn latent_march(&self, z: &FieldTensor, step: usize) -> Result<FieldTensor> {
        Ok(self.march_forward(z, step)?.0)
    }

    fn march_forward(&self, z: &FieldTensor, step: usize) -> Result<(FieldTensor, MlpCache)> {
        if step >= self.config.march_steps {
            return Err(Error::contract(format!(
                "march step {step} out of range for k = {}",
                self.config.march_steps
            )));
        }
        let tau = step as f64 / self.config.march_steps as f64;
        let (dz, cache) = self.propagator.forward(&with_time(&z.to_matrix(), tau))?;
        let mut out = z.to_matrix();
        out.add_assign(&dz);
        Ok((FieldTensor::from_matrix(z.spatial_shape(), out)?, cache))
    }

    pub fn decode(&self, z: &FieldTensor) -> Result<FieldTensor> {
        FieldTensor::from_matrix(z.spatial_shape(), self.decoder.apply(&z.to_matrix())?)
    }

    /// Encodes and runs the attention stack, returning the latent state.
    pub fn latent(&self, frames: &[FieldTensor]) -> Result<FieldTensor> {
        let mut z = self.encode(frames)?;
        let feats = self.pos[0].features(&grid_coords(&self.config.grid))?;
        for (l, block) in self.blocks.iter().enumerate() {
            let p = self.pos[self.pos_index(l)].w_out.apply(&feats)?;
            z = self.block_step(block, &z, &p)?.0;
        }
        Ok(z)
    }

    /// Input of every attention block (latent plus positional term).
    pub fn block_inputs(&self, frames: &[FieldTensor]) -> Result<Vec<FieldTensor>> {
        let mut z = self.encode(frames)?;
        let feats = self.pos[0].features(&grid_coords(&self.config.grid))?;
        let mut out = Vec::with_capacity(self.blocks.len());
        for (l, block) in self.blocks.iter().enumerate() {
            let p = self.pos[self.pos_index(l)].w_out.apply(&feats)?;
            let mut zp = z.to_matrix();
            zp.add_assign(&p);
            out.push(FieldTensor::from_matrix(&self.config.grid, zp)?);
            z = self.block_step(block, &z, &p)?.0;
        }
        Ok(out)
    }

    fn block_step(&self, block: &AttentionBlock, z: &FieldTensor, p: &Matrix) -> Result<(FieldTensor, BlockCache)> {
        let mut zp = z.to_matrix();
        zp.add_assign(p);
        let zp = FieldTensor::from_matrix(z.spatial_shape(), zp)?;
        let (mut y, cache) = block.forward(&zp)?;
        if self.config.skip_before_pos {
            y.as_mut_slice().iter_mut().zip(p.as_slice()).for_each(|(a, b)| *a -= b);
        }
        Ok((y, cache))
    }

    /// One model call producing `march_steps` frames.
    pub fn forward(&self, frames: &[FieldTensor]) -> Result<(Vec<FieldTensor>, ModelCache)> {
        self.forward_steps(frames, self.config.march_steps)
    }

    /// One model call producing the first `steps <= k` frames.
    pub fn forward_steps(&self, frames: &[FieldTensor], steps: usize) -> Result<(Vec<FieldTensor>, ModelCache)> {
        self.check_frames(frames)?;
        if steps == 0 || steps > self.config.march_steps {
            return Err(Error::contract(format!(
                "cannot march {steps} steps with k = {}",
                self.config.march_steps
            )));
        }
        let grid = self.config.grid.clone();
        let (z0, encoder) = self.encoder.forward(&self.stack(frames))?;
        let mut z = FieldTensor::from_matrix(&grid, z0)?;
        let feats = self.pos[0].features(&grid_coords(&grid))?;
        let mut layers = Vec::with_capacity(self.blocks.len());
        for (l, block) in self.blocks.iter().enumerate() {
            let (p, pos) = self.pos[self.pos_index(l)].forward_features(&feats)?;
            let (y, block_cache) = self.block_step(block, &z, &p)?;
            layers.push(LayerCache {
                pos,
                block: block_cache,
            });
            z = y;
        }
        let mut out = Vec::with_capacity(steps);
        let mut marches = Vec::with_capacity(steps);
        for j in 0..steps {
            let (zn, propagator) = self.march_forward(&z, j)?;
            let (y, decoder) = self.decoder.forward(&zn.to_matrix())?;
            out.push(FieldTensor::from_matrix(&grid, y)?);
            marches.push(MarchCache { propagator, decoder });
            z = zn;
        }
        Ok((
            out,
            ModelCache {
                encoder,
                layers,
                marches,
            },
        ))
    }

    pub fn predict(&self, frames: &[FieldTensor]) -> Result<Vec<FieldTensor>> {
        Ok(self.forward(frames)?.0)
    }

    /// Accumulates parameter gradients given the loss gradient for each
    /// produced frame (`grads.len() == cache.steps()`).
    pub fn backward(&mut self, cache: &ModelCache, grads: &[FieldTensor]) -> Result<()> {
        if grads.len() != cache.marches.len() {
            return Err(Error::contract(format!(
                "{} frame gradients for {} produced frames",
                grads.len(),
                cache.marches.len()
            )));
        }
        let d = self.config.width;
        let n = self.config.points();
        let mut gz = Matrix::zeros(n, d);
        for (mc, g) in cache.marches.iter().zip(grads).rev() {
            gz.add_assign(&self.decoder.backward(&mc.decoder, &g.to_matrix()));
            let g_cat = self.propagator.backward(&mc.propagator, &gz);
            for r in 0..n {
                gz.row_mut(r).iter_mut().zip(&g_cat.row(r)[..d]).for_each(|(a, b)| *a += b);
            }
        }
        let grid = self.config.grid.clone();
        for l in (0..self.blocks.len()).rev() {
            let lc = &cache.layers[l];
            let g_out = FieldTensor::from_matrix(&grid, gz)?;
            let g_in = self.blocks[l].backward(&lc.block, &g_out).into_matrix();
            let mut gp = g_in.clone();
            if self.config.skip_before_pos {
                gp.add_scaled(-1.0, &g_out.to_matrix());
            }
            let idx = self.pos_index(l);
            self.pos[idx].backward(&lc.pos, &gp);
            gz = g_in;
        }
        self.encoder.backward_params_only(&cache.encoder, &gz);
        Ok(())
    }
}

impl Module for FactFormer {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.encoder.visit(f);
        self.pos.iter().for_each(|p| p.visit(f));
        self.blocks.iter().for_each(|b| b.visit(f));
        self.propagator.visit(f);
        self.decoder.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.encoder.visit_mut(f);
        self.pos.iter_mut().for_each(|p| p.visit_mut(f));
        self.blocks.iter_mut().for_each(|b| b.visit_mut(f));
        self.propagator.visit_mut(f);
        self.decoder.visit_mut(f);
    }
}
