use rand::Rng;

use super::kernels::{axial_kernels_backward, build_axial_kernels, AxialKernelSet, AxisKernelCache};
use super::projector::{AxialProjector, ProjectCache};
use crate::counters::{self, Counter};
use crate::error::{Error, Result};
use crate::nn::{Linear, LinearCache, Module, Param, RopeTable};
use crate::tensor::{split_at_mode, unravel, FieldTensor, Matrix};

/// Largest grid the brute-force kernel integral accepts.
pub const ORACLE_MAX_POINTS: usize = 10_000;

/// Factorized kernel-integral attention over an n-d grid.
///
/// Values `V = U W_v` are split into `heads` channel groups; each group is
/// contracted with its own axial kernel along every axis in ascending order,
/// and the concatenated result is mixed by an output linear map.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedAttention {
    pub proj: AxialProjector,
    pub wq: Vec<Param>,
    pub wk: Vec<Param>,
    pub wv: Linear,
    pub out: Linear,
    heads: usize,
    rope: RopeTable,
    identity_kernels: bool,
}

#[derive(Debug, Clone)]
pub struct FactorizedCache {
    spatial: Vec<usize>,
    wv: LinearCache,
    proj: Vec<ProjectCache>,
    kernel_caches: Vec<AxisKernelCache>,
    kernels: AxialKernelSet,
    chain: Vec<FieldTensor>,
    out: LinearCache,
}

impl FactorizedCache {
    /// `V = U W_v`.
    pub fn values(&self) -> &FieldTensor {
        &self.chain[0]
    }

    /// Output of the mode-product chain, before the head mix.
    pub fn pre_mix(&self) -> &FieldTensor {
        self.chain.last().expect("chain holds at least V")
    }

    pub fn kernels(&self) -> &AxialKernelSet {
        &self.kernels
    }

    /// Rotary-encoded queries of one axis, `S_m x (heads * d_k)`.
    pub fn encoded_queries(&self, axis: usize) -> &Matrix {
        &self.kernel_caches[axis].q_tilde
    }

    pub fn encoded_keys(&self, axis: usize) -> &Matrix {
        &self.kernel_caches[axis].k_tilde
    }
}

impl FactorizedAttention {
    pub fn new(
        name: &str,
        axes: usize,
        width: usize,
        heads: usize,
        head_dim: usize,
        lambda: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!(
                "hidden width {width} must split evenly into {heads} value heads"
            )));
        }
        if !(1..=3).contains(&axes) {
            return Err(Error::Config(format!("factorized attention supports 1 to 3 axes, got {axes}")));
        }
        let rope = RopeTable::new(head_dim, lambda)?;
        let proj = AxialProjector::new(&format!("{name}.proj"), axes, width, rng);
        let wq = (0..axes)
            .map(|m| Param::glorot(format!("{name}.wq{m}"), width, heads * head_dim, rng))
            .collect();
        let wk = (0..axes)
            .map(|m| Param::glorot(format!("{name}.wk{m}"), width, heads * head_dim, rng))
            .collect();
        Ok(FactorizedAttention {
            proj,
            wq,
            wk,
            wv: Linear::new(&format!("{name}.wv"), width, width, false, rng),
            out: Linear::new(&format!("{name}.out"), width, width, true, rng),
            heads,
            rope,
            identity_kernels: false,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.rope.head_dim()
    }

    pub fn width(&self) -> usize {
        self.wv.in_width()
    }

    pub fn axes(&self) -> usize {
        self.wq.len()
    }

    pub fn rope(&self) -> &RopeTable {
        &self.rope
    }

    /// Test hook, not for production use: replaces every axial kernel by the
    /// identity so the chain returns `V` unchanged.
    pub fn force_identity_kernels(&mut self, on: bool) {
        self.identity_kernels = on;
    }

    fn check(&self, u: &FieldTensor) -> Result<()> {
        if u.ndim() != self.axes() || u.channels() != self.width() {
            return Err(Error::contract(format!(
                "factorized attention built for {} axes and width {}, got field shape {:?}",
                self.axes(),
                self.width(),
                u.shape()
            )));
        }
        Ok(())
    }

    /// Axial kernels for input `u`, plus the per-axis projector and kernel caches.
    fn kernels_with_caches(&self, u: &FieldTensor) -> Result<(AxialKernelSet, Vec<ProjectCache>, Vec<AxisKernelCache>)> {
        self.check(u)?;
        if self.identity_kernels {
            return Ok((AxialKernelSet::identity(u.spatial_shape(), self.heads), Vec::new(), Vec::new()));
        }
        let mut phis = Vec::with_capacity(self.axes());
        let mut proj = Vec::with_capacity(self.axes());
        for m in 0..self.axes() {
            let (phi, c) = self.proj.forward(u, m)?;
            phis.push(phi);
            proj.push(c);
        }
        let (set, kc) = build_axial_kernels(&phis, &self.wq, &self.wk, self.heads, &self.rope)?;
        Ok((set, proj, kc))
    }

    pub fn kernels(&self, u: &FieldTensor) -> Result<AxialKernelSet> {
        Ok(self.kernels_with_caches(u)?.0)
    }

    pub fn apply(&self, u: &FieldTensor) -> Result<FieldTensor> {
        Ok(self.forward(u)?.0)
    }

    pub fn forward(&self, u: &FieldTensor) -> Result<(FieldTensor, FactorizedCache)> {
        let (kernels, proj, kernel_caches) = self.kernels_with_caches(u)?;
        let spatial = u.spatial_shape().to_vec();
        let (v, wv) = self.wv.forward(&u.to_matrix())?;
        let mut chain = Vec::with_capacity(self.axes() + 1);
        chain.push(FieldTensor::from_matrix(&spatial, v)?);
        for m in 0..self.axes() {
            let next = head_mode_product(chain.last().unwrap(), &kernels.kernels[m], m, false);
            chain.push(next);
        }
        let (z, out) = self.out.forward(&chain.last().unwrap().to_matrix())?;
        let cache = FactorizedCache {
            spatial: spatial.clone(),
            wv,
            proj,
            kernel_caches,
            kernels,
            chain,
            out,
        };
        Ok((FieldTensor::from_matrix(&spatial, z)?, cache))
    }

    /// Accumulates all parameter gradients and returns the gradient with
    /// respect to the input field, through both the value and projector paths.
    pub fn backward(&mut self, cache: &FactorizedCache, g: &FieldTensor) -> FieldTensor {
        let spatial = &cache.spatial;
        let gz = self.out.backward(&cache.out, &g.to_matrix());
        let mut gy = FieldTensor::from_matrix(spatial, gz).expect("gradient keeps the field shape");
        let mut g_kernels = Vec::with_capacity(self.axes());
        for m in (0..self.axes()).rev() {
            if !self.identity_kernels {
                g_kernels.push(head_kernel_grad(&gy, &cache.chain[m], self.heads, m));
            }
            gy = head_mode_product(&gy, &cache.kernels.kernels[m], m, true);
        }
        g_kernels.reverse();
        let mut gu = self.wv.backward(&cache.wv, &gy.into_matrix());
        if !self.identity_kernels {
            for (m, ga) in g_kernels.iter().enumerate() {
                let gphi = axial_kernels_backward(
                    &cache.kernel_caches[m],
                    ga,
                    cache.kernels.weights[m],
                    &mut self.wq[m],
                    &mut self.wk[m],
                    &self.rope,
                );
                self.proj.backward(spatial, &cache.proj[m], &gphi, &mut gu);
            }
        }
        FieldTensor::from_matrix(spatial, gu).expect("gradient keeps the field shape")
    }
}

impl Module for FactorizedAttention {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.proj.visit(f);
        self.wq.iter().for_each(|p| f(p));
        self.wk.iter().for_each(|p| f(p));
        self.wv.visit(f);
        self.out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.proj.visit_mut(f);
        self.wq.iter_mut().for_each(|p| f(p));
        self.wk.iter_mut().for_each(|p| f(p));
        self.wv.visit_mut(f);
        self.out.visit_mut(f);
    }
}

/// Mode product along spatial `axis` where channel group `h` uses `kernels[h]`
/// (or its transpose). Each output sums over the axis index in ascending order.
pub fn head_mode_product(y: &FieldTensor, kernels: &[Matrix], axis: usize, transpose: bool) -> FieldTensor {
    let d = y.channels();
    let heads = kernels.len();
    let dv = d / heads;
    let (outer, s, inner) = split_at_mode(y.shape(), axis);
    let pts = inner / d;
    counters::add(Counter::ModeProduct, (outer * s * s * inner) as u64);
    let src = y.as_slice();
    let mut out = vec![0.0; src.len()];
    let mut coef = vec![0.0; heads];
    for o in 0..outer {
        let base = o * s * inner;
        for j in 0..s {
            let dst = &mut out[base + j * inner..base + (j + 1) * inner];
            for i in 0..s {
                for (h, a) in kernels.iter().enumerate() {
                    coef[h] = if transpose { a.get(i, j) } else { a.get(j, i) };
                }
                let srow = &src[base + i * inner..base + (i + 1) * inner];
                for p in 0..pts {
                    let dp = &mut dst[p * d..(p + 1) * d];
                    let sp = &srow[p * d..(p + 1) * d];
                    for (h, &a) in coef.iter().enumerate() {
                        let r = h * dv..(h + 1) * dv;
                        for (x, v) in dp[r.clone()].iter_mut().zip(&sp[r]) {
                            *x += a * v;
                        }
                    }
                }
            }
        }
    }
    FieldTensor::from_raw(y.shape().to_vec(), out)
}

/// `gA_h[j, i] = sum over positions and group-h channels of gy[.., j, ..] * y[.., i, ..]`.
fn head_kernel_grad(gy: &FieldTensor, y: &FieldTensor, heads: usize, axis: usize) -> Vec<Matrix> {
    let d = y.channels();
    let dv = d / heads;
    let (outer, s, inner) = split_at_mode(y.shape(), axis);
    let pts = inner / d;
    counters::add(Counter::ModeProduct, (outer * s * s * inner) as u64);
    let mut ga = vec![Matrix::zeros(s, s); heads];
    let (gd, yd) = (gy.as_slice(), y.as_slice());
    for o in 0..outer {
        let base = o * s * inner;
        for j in 0..s {
            let grow = &gd[base + j * inner..base + (j + 1) * inner];
            for i in 0..s {
                let yrow = &yd[base + i * inner..base + (i + 1) * inner];
                for (h, gah) in ga.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for p in 0..pts {
                        let r = p * d + h * dv..p * d + (h + 1) * dv;
                        acc += grow[r.clone()].iter().zip(&yrow[r]).map(|(a, b)| a * b).sum::<f64>();
                    }
                    let cur = gah.get(j, i);
                    gah.set(j, i, cur + acc);
                }
            }
        }
    }
    ga
}

/// Direct quadrature of the factorized kernel integral:
/// `z[i, c] = sum_j prod_m A[m][h(c)][i_m, j_m] * v[j, c]` over every pair of
/// grid points, where channel `c` belongs to head `h(c) = c / (d / heads)`.
pub fn brute_force_kernel_integral(v: &FieldTensor, kernels: &AxialKernelSet) -> Result<FieldTensor> {
    let spatial = v.spatial_shape();
    let n_pts = v.points();
    if n_pts > ORACLE_MAX_POINTS {
        return Err(Error::OracleScale {
            points: n_pts,
            limit: ORACLE_MAX_POINTS,
        });
    }
    let heads = kernels.heads();
    if kernels.axes() != spatial.len() || heads == 0 || v.channels() % heads != 0 {
        return Err(Error::contract(format!(
            "{} axes x {} heads of kernels do not fit a field of shape {:?}",
            kernels.axes(),
            heads,
            v.shape()
        )));
    }
    for (m, &s) in spatial.iter().enumerate() {
        if kernels.kernels[m].iter().any(|a| a.shape() != (s, s)) {
            return Err(Error::contract(format!("kernels of axis {m} are not {s} x {s}")));
        }
    }
    let d = v.channels();
    let dv = d / heads;
    let vd = v.as_slice();
    let mut out = vec![0.0; vd.len()];
    for i in 0..n_pts {
        let ii = unravel(spatial, i);
        for j in 0..n_pts {
            let jj = unravel(spatial, j);
            for h in 0..heads {
                let w: f64 = (0..spatial.len()).map(|m| kernels.kernels[m][h].get(ii[m], jj[m])).product();
                for c in h * dv..(h + 1) * dv {
                    out[i * d + c] += w * vd[j * d + c];
                }
            }
        }
    }
    Ok(FieldTensor::from_raw(v.shape().to_vec(), out))
}
