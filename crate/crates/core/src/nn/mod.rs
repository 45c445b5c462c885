//! Differentiable layers with hand-written backward passes.

mod linear;
mod mlp;
mod norm;
mod param;
mod rff;
mod rope;

pub use linear::{Linear, LinearCache};
pub use mlp::{gelu, gelu_grad, Mlp, MlpCache};
pub use norm::{
    instance_norm, instance_norm_backward, normalize_columns, normalize_columns_backward, NormCache,
    INSTANCE_NORM_EPS,
};
pub use param::{Module, Param};
pub use rff::{RffCache, RffEncoder};
pub use rope::{AxisSplitRope, RopeTable};

use crate::tensor::Matrix;

/// Grid coordinates `i / S` along one axis of `S` points.
pub fn axis_coords(s: usize) -> Vec<f64> {
    (0..s).map(|i| i as f64 / s as f64).collect()
}

/// Coordinates of every grid point in row-major order, one row per point.
pub fn grid_coords(spatial: &[usize]) -> Matrix {
    let n = spatial.len();
    let total: usize = spatial.iter().product();
    let mut out = Matrix::zeros(total, n);
    for p in 0..total {
        let mut rem = p;
        for a in (0..n).rev() {
            out.set(p, a, (rem % spatial[a]) as f64 / spatial[a] as f64);
            rem /= spatial[a];
        }
    }
    out
}
