use crate::error::{Error, Result};
use crate::tensor::{FieldTensor, Matrix};

/// Variance floor inside instance normalization.
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-channel statistics saved for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

/// Normalizes every column of `x` (one channel across all positions) to zero
/// mean and unit biased variance: `(x - mean) / sqrt(var + eps)`.
pub fn normalize_columns(x: &Matrix) -> Result<(Matrix, NormCache)> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::DegenerateStatistics(format!(
            "instance normalization needs at least 2 positions, got {n}"
        )));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        mean.iter_mut().zip(x.row(r)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for r in 0..n {
        var.iter_mut()
            .zip(x.row(r))
            .zip(&mean)
            .for_each(|((s, v), m)| *s += (v - m) * (v - m));
    }
    let inv_std: Vec<f64> = var
        .iter()
        .map(|s| 1.0 / (s / n as f64 + INSTANCE_NORM_EPS).sqrt())
        .collect();
    let mut xhat = Matrix::zeros(n, d);
    for r in 0..n {
        let src = x.row(r);
        let dst = xhat.row_mut(r);
        for c in 0..d {
            dst[c] = (src[c] - mean[c]) * inv_std[c];
        }
    }
    Ok((xhat.clone(), NormCache { xhat, inv_std }))
}

/// `gx = inv_std * (g - mean(g) - xhat * mean(g * xhat))`, per column.
pub fn normalize_columns_backward(cache: &NormCache, g: &Matrix) -> Matrix {
    let (n, d) = g.shape();
    let mut mean_g = vec![0.0; d];
    let mut mean_gx = vec![0.0; d];
    for r in 0..n {
        let gr = g.row(r);
        let xr = cache.xhat.row(r);
        for c in 0..d {
            mean_g[c] += gr[c];
            mean_gx[c] += gr[c] * xr[c];
        }
    }
    let inv_n = 1.0 / n as f64;
    mean_g.iter_mut().for_each(|v| *v *= inv_n);
    mean_gx.iter_mut().for_each(|v| *v *= inv_n);
    let mut gx = Matrix::zeros(n, d);
    for r in 0..n {
        let gr = g.row(r);
        let xr = cache.xhat.row(r);
        let out = gx.row_mut(r);
        for c in 0..d {
            out[c] = cache.inv_std[c] * (gr[c] - mean_g[c] - xr[c] * mean_gx[c]);
        }
    }
    gx
}

/// Instance normalization of a field: each channel normalized over the grid.
pub fn instance_norm(t: &FieldTensor) -> Result<(FieldTensor, NormCache)> {
    let (y, cache) = normalize_columns(&t.to_matrix())?;
    Ok((FieldTensor::from_matrix(t.spatial_shape(), y)?, cache))
}

pub fn instance_norm_backward(cache: &NormCache, g: &FieldTensor) -> FieldTensor {
    let gx = normalize_columns_backward(cache, &g.to_matrix());
    FieldTensor::from_matrix(g.spatial_shape(), gx).expect("gradient keeps the field shape")
}
