use crate::counters::Counter;
use crate::error::{Error, Result};
use crate::nn::{axis_coords, Param, RopeTable};
use crate::tensor::{matmul_acc, matmul_acc_as, matmul_tn_acc, Matrix};

/// Per-axis, per-head kernel matrices `A[m][h]` (`S_m x S_m`) and mesh weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AxialKernelSet {
    pub kernels: Vec<Vec<Matrix>>,
    pub weights: Vec<f64>,
}

impl AxialKernelSet {
    pub fn axes(&self) -> usize {
        self.kernels.len()
    }

    pub fn heads(&self) -> usize {
        self.kernels.first().map_or(0, Vec::len)
    }

    pub fn get(&self, axis: usize, head: usize) -> &Matrix {
        &self.kernels[axis][head]
    }

    /// Identity kernels for a grid, one per axis and head.
    pub fn identity(spatial: &[usize], heads: usize) -> Self {
        AxialKernelSet {
            kernels: spatial.iter().map(|&s| vec![Matrix::identity(s); heads]).collect(),
            weights: spatial.iter().map(|&s| 1.0 / s as f64).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.kernels.iter().flatten().all(Matrix::is_finite)
    }
}

/// Encoded queries and keys of one axis, saved for the backward pass.
#[derive(Debug, Clone)]
pub struct AxisKernelCache {
    pub phi: Matrix,
    pub q_tilde: Matrix,
    pub k_tilde: Matrix,
}

/// `w * Q_h K_h^T` for every head, with `Q`, `K` laid out head-major in columns.
pub fn head_kernels(q: &Matrix, k: &Matrix, heads: usize, w: f64) -> Vec<Matrix> {
    let dk = q.cols() / heads;
    (0..heads)
        .map(|h| {
            let qh = q.col_block(h * dk, dk);
            let kh_t = k.col_block(h * dk, dk).transpose();
            let mut a = Matrix::zeros(q.rows(), k.rows());
            matmul_acc_as(&qh, &kh_t, &mut a, Counter::KernelBuild);
            a.scale(w);
            a
        })
        .collect()
}

/// Builds `A[m][h] = (1/S_m) Q~ K~^T` from projected axis functions
/// `phis[m]` (`S_m x d`), with `Q = phi W_q[m]`, `K = phi W_k[m]` split into
/// `heads` blocks and rotary-encoded along the axis.
pub fn build_axial_kernels(
    phis: &[Matrix],
    wq: &[Param],
    wk: &[Param],
    heads: usize,
    rope: &RopeTable,
) -> Result<(AxialKernelSet, Vec<AxisKernelCache>)> {
    if phis.len() != wq.len() || phis.len() != wk.len() {
        return Err(Error::contract(format!(
            "{} projected axes but {} query and {} key projections",
            phis.len(),
            wq.len(),
            wk.len()
        )));
    }
    let dk = rope.head_dim();
    let mut kernels = Vec::with_capacity(phis.len());
    let mut weights = Vec::with_capacity(phis.len());
    let mut caches = Vec::with_capacity(phis.len());
    for ((phi, wq), wk) in phis.iter().zip(wq).zip(wk) {
        for p in [wq, wk] {
            if p.value.shape() != (phi.cols(), heads * dk) {
                return Err(Error::contract(format!(
                    "projection {} has shape {:?}, expected ({}, {})",
                    p.name(),
                    p.value.shape(),
                    phi.cols(),
                    heads * dk
                )));
            }
        }
        let s = phi.rows();
        let coords = axis_coords(s);
        let q_tilde = rope.encode(&phi.matmul(&wq.value)?, &coords)?;
        let k_tilde = rope.encode(&phi.matmul(&wk.value)?, &coords)?;
        let w = 1.0 / s as f64;
        kernels.push(head_kernels(&q_tilde, &k_tilde, heads, w));
        weights.push(w);
        caches.push(AxisKernelCache {
            phi: phi.clone(),
            q_tilde,
            k_tilde,
        });
    }
    Ok((AxialKernelSet { kernels, weights }, caches))
}

/// Backward of [`build_axial_kernels`] for one axis. Accumulates the `W_q`
/// and `W_k` gradients and returns the gradient with respect to `phi`.
pub fn axial_kernels_backward(
    cache: &AxisKernelCache,
    g_kernels: &[Matrix],
    w: f64,
    wq: &mut Param,
    wk: &mut Param,
    rope: &RopeTable,
) -> Matrix {
    let s = cache.phi.rows();
    let dk = rope.head_dim();
    let heads = g_kernels.len();
    let mut gq = Matrix::zeros(s, heads * dk);
    let mut gk = Matrix::zeros(s, heads * dk);
    for (h, ga) in g_kernels.iter().enumerate() {
        let qh = cache.q_tilde.col_block(h * dk, dk);
        let kh = cache.k_tilde.col_block(h * dk, dk);
        // dQ~ = w gA K~, dK~ = w gA^T Q~
        let mut gqh = Matrix::zeros(s, dk);
        matmul_acc(ga, &kh, &mut gqh);
        gqh.scale(w);
        let mut gkh = Matrix::zeros(s, dk);
        matmul_tn_acc(ga, &qh, &mut gkh);
        gkh.scale(w);
        gq.set_col_block(h * dk, &gqh);
        gk.set_col_block(h * dk, &gkh);
    }
    let coords = axis_coords(s);
    let gq = rope.encode_backward(&gq, &coords);
    let gk = rope.encode_backward(&gk, &coords);
    matmul_tn_acc(&cache.phi, &gq, &mut wq.grad);
    matmul_tn_acc(&cache.phi, &gk, &mut wk.grad);
    let mut gphi = Matrix::zeros(s, cache.phi.cols());
    matmul_acc(&gq, &wq.value.transpose(), &mut gphi);
    matmul_acc(&gk, &wk.value.transpose(), &mut gphi);
    gphi
}
