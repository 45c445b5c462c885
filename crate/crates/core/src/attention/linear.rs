use rand::Rng;

use crate::counters::Counter;
use crate::error::{Error, Result};
use crate::nn::{normalize_columns, normalize_columns_backward, AxisSplitRope, Linear, LinearCache, Module, NormCache, Param};
use crate::tensor::{matmul_acc_as, matmul_tn_acc_as, Matrix};

/// Default working-set limit for the linear-attention forward pass.
pub const DEFAULT_MEMORY_BUDGET: usize = 3 << 30;

/// Largest materialized `N x N` kernel, in bytes.
pub const FULL_KERNEL_BUDGET: usize = 1 << 30;

/// Softmax-free attention over the flattened grid, `Z = (1/N) Q~ (K~^T V)`
/// per head, with `K~` and `V` optionally instance-normalized column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub out: Linear,
    heads: usize,
    head_dim: usize,
    rope: AxisSplitRope,
    normalize: bool,
    memory_budget: usize,
}

#[derive(Debug, Clone)]
pub struct LinearAttnCache {
    q: LinearCache,
    k: LinearCache,
    v: LinearCache,
    coords: Matrix,
    q_tilde: Matrix,
    k_hat: Matrix,
    v_hat: Matrix,
    k_norm: Option<NormCache>,
    v_norm: Option<NormCache>,
    out: LinearCache,
}

impl LinearAttnCache {
    pub fn encoded_queries(&self) -> &Matrix {
        &self.q_tilde
    }

    /// Encoded keys after the optional normalization.
    pub fn encoded_keys(&self) -> &Matrix {
        &self.k_hat
    }

    pub fn values(&self) -> &Matrix {
        &self.v_hat
    }
}

/// `Z_h = (1/N) Q_h (K_h^T V_h)` for every head; `q`, `k` have width
/// `heads * d_k` and `v` has width `heads * d_v`.
pub fn linear_attention_core(q: &Matrix, k: &Matrix, v: &Matrix, heads: usize) -> Result<Matrix> {
    check_core(q, k, v, heads)?;
    let n = q.rows();
    let (dk, dv) = (q.cols() / heads, v.cols() / heads);
    let mut z = Matrix::zeros(n, heads * dv);
    for h in 0..heads {
        let m = head_moment(k, v, h, dk, dv);
        let mut zh = Matrix::zeros(n, dv);
        matmul_acc_as(&q.col_block(h * dk, dk), &m, &mut zh, Counter::LinearCore);
        zh.scale(1.0 / n as f64);
        z.set_col_block(h * dv, &zh);
    }
    Ok(z)
}

/// Same product evaluated as `((1/N) Q_h K_h^T) V_h`, materializing the kernel.
pub fn linear_attention_direct(q: &Matrix, k: &Matrix, v: &Matrix, heads: usize) -> Result<Matrix> {
    check_core(q, k, v, heads)?;
    let n = q.rows();
    let dv = v.cols() / heads;
    let mut z = Matrix::zeros(n, heads * dv);
    for h in 0..heads {
        let a = full_kernel(q, k, heads, h)?;
        let mut zh = Matrix::zeros(n, dv);
        matmul_acc_as(&a, &v.col_block(h * dv, dv), &mut zh, Counter::FullKernel);
        z.set_col_block(h * dv, &zh);
    }
    Ok(z)
}

/// The explicit `N x N` kernel `(1/N) Q_h K_h^T` of one head.
pub fn full_kernel(q: &Matrix, k: &Matrix, heads: usize, head: usize) -> Result<Matrix> {
    let n = q.rows();
    full_kernel_budget_check(n)?;
    if head >= heads || q.cols() != k.cols() || q.cols() % heads != 0 || k.rows() != n {
        return Err(Error::contract(format!(
            "head {head} of {heads} for queries {:?} and keys {:?}",
            q.shape(),
            k.shape()
        )));
    }
    let dk = q.cols() / heads;
    let mut a = Matrix::zeros(n, n);
    matmul_acc_as(
        &q.col_block(head * dk, dk),
        &k.col_block(head * dk, dk).transpose(),
        &mut a,
        Counter::FullKernel,
    );
    a.scale(1.0 / n as f64);
    Ok(a)
}

/// Fails with a resource error when an `n x n` kernel exceeds [`FULL_KERNEL_BUDGET`].
pub fn full_kernel_budget_check(n: usize) -> Result<()> {
    let bytes = n.saturating_mul(n).saturating_mul(8);
    if bytes > FULL_KERNEL_BUDGET {
        return Err(Error::Resource(format!(
            "materializing a {n} x {n} kernel needs {bytes} bytes, over the {FULL_KERNEL_BUDGET} byte budget"
        )));
    }
    Ok(())
}

fn check_core(q: &Matrix, k: &Matrix, v: &Matrix, heads: usize) -> Result<()> {
    if heads == 0
        || q.shape() != k.shape()
        || v.rows() != q.rows()
        || q.cols() % heads != 0
        || v.cols() % heads != 0
        || q.rows() == 0
    {
        return Err(Error::contract(format!(
            "linear attention over {heads} heads with queries {:?}, keys {:?}, values {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    Ok(())
}

fn head_moment(k: &Matrix, v: &Matrix, h: usize, dk: usize, dv: usize) -> Matrix {
    let mut m = Matrix::zeros(dk, dv);
    matmul_tn_acc_as(&k.col_block(h * dk, dk), &v.col_block(h * dv, dv), &mut m, Counter::LinearCore);
    m
}

impl LinearAttention {
    pub fn new(
        name: &str,
        axes: usize,
        width: usize,
        heads: usize,
        head_dim: usize,
        lambda: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 {
            return Err(Error::Config("linear attention needs at least one head".into()));
        }
        let rope = AxisSplitRope::new(head_dim, axes, lambda)?;
        let inner = heads * head_dim;
        Ok(LinearAttention {
            wq: Linear::new(&format!("{name}.wq"), width, inner, false, rng),
            wk: Linear::new(&format!("{name}.wk"), width, inner, false, rng),
            wv: Linear::new(&format!("{name}.wv"), width, inner, false, rng),
            out: Linear::new(&format!("{name}.out"), inner, width, true, rng),
            heads,
            head_dim,
            rope,
            normalize: true,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn set_normalize(&mut self, on: bool) {
        self.normalize = on;
    }

    pub fn set_memory_budget(&mut self, bytes: usize) {
        self.memory_budget = bytes;
    }

    /// Bytes held by the forward activations for `n` points.
    pub fn working_set(&self, n: usize) -> usize {
        let inner = self.heads * self.head_dim;
        let width = self.wq.in_width();
        8 * n * (9 * inner + 2 * width)
    }

    pub fn apply(&self, u: &Matrix, coords: &Matrix) -> Result<Matrix> {
        Ok(self.forward(u, coords)?.0)
    }

    pub fn forward(&self, u: &Matrix, coords: &Matrix) -> Result<(Matrix, LinearAttnCache)> {
        let n = u.rows();
        let need = self.working_set(n);
        if need > self.memory_budget {
            return Err(Error::Resource(format!(
                "linear attention on {n} points needs about {need} bytes, over the {} byte budget",
                self.memory_budget
            )));
        }
        if coords.rows() != n {
            return Err(Error::contract(format!("{} coordinate rows for {n} points", coords.rows())));
        }
        let (q, qc) = self.wq.forward(u)?;
        let (k, kc) = self.wk.forward(u)?;
        let (v, vc) = self.wv.forward(u)?;
        let q_tilde = self.rope.encode(&q, coords);
        let k_tilde = self.rope.encode(&k, coords);
        let (k_hat, k_norm, v_hat, v_norm) = if self.normalize {
            let (kh, kn) = normalize_columns(&k_tilde)?;
            let (vh, vn) = normalize_columns(&v)?;
            (kh, Some(kn), vh, Some(vn))
        } else {
            (k_tilde, None, v, None)
        };
        let z = linear_attention_core(&q_tilde, &k_hat, &v_hat, self.heads)?;
        let (y, out) = self.out.forward(&z)?;
        Ok((
            y,
            LinearAttnCache {
                q: qc,
                k: kc,
                v: vc,
                coords: coords.clone(),
                q_tilde,
                k_hat,
                v_hat,
                k_norm,
                v_norm,
                out,
            },
        ))
    }

    pub fn backward(&mut self, cache: &LinearAttnCache, gy: &Matrix) -> Matrix {
        let gz = self.out.backward(&cache.out, gy);
        let n = gz.rows();
        let (heads, dk) = (self.heads, self.head_dim);
        let w = 1.0 / n as f64;
        let mut gq = Matrix::zeros(n, heads * dk);
        let mut gk = Matrix::zeros(n, heads * dk);
        let mut gv = Matrix::zeros(n, heads * dk);
        for h in 0..heads {
            let qh = cache.q_tilde.col_block(h * dk, dk);
            let kh = cache.k_hat.col_block(h * dk, dk);
            let vh = cache.v_hat.col_block(h * dk, dk);
            let gzh = gz.col_block(h * dk, dk);
            let m = head_moment(&cache.k_hat, &cache.v_hat, h, dk, dk);
            // dQ = w gZ M^T, dM = w Q^T gZ, dK = V dM^T, dV = K dM
            let mut gqh = Matrix::zeros(n, dk);
            matmul_acc_as(&gzh, &m.transpose(), &mut gqh, Counter::LinearCore);
            gqh.scale(w);
            let mut gm = Matrix::zeros(dk, dk);
            matmul_tn_acc_as(&qh, &gzh, &mut gm, Counter::LinearCore);
            gm.scale(w);
            let mut gkh = Matrix::zeros(n, dk);
            matmul_acc_as(&vh, &gm.transpose(), &mut gkh, Counter::LinearCore);
            let mut gvh = Matrix::zeros(n, dk);
            matmul_acc_as(&kh, &gm, &mut gvh, Counter::LinearCore);
            gq.set_col_block(h * dk, &gqh);
            gk.set_col_block(h * dk, &gkh);
            gv.set_col_block(h * dk, &gvh);
        }
        if let (Some(kn), Some(vn)) = (&cache.k_norm, &cache.v_norm) {
            gk = normalize_columns_backward(kn, &gk);
            gv = normalize_columns_backward(vn, &gv);
        }
        let gq = self.rope.encode_backward(&gq, &cache.coords);
        let gk = self.rope.encode_backward(&gk, &cache.coords);
        let mut gu = self.wq.backward(&cache.q, &gq);
        gu.add_assign(&self.wk.backward(&cache.k, &gk));
        gu.add_assign(&self.wv.backward(&cache.v, &gv));
        gu
    }
}

impl Module for LinearAttention {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.wq.visit(f);
        self.wk.visit(f);
        self.wv.visit(f);
        self.out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.wq.visit_mut(f);
        self.wk.visit_mut(f);
        self.wv.visit_mut(f);
        self.out.visit_mut(f);
    }
}
