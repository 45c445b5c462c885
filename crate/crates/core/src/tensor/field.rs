use super::matrix::Matrix;
use crate::counters::{self, Counter};
use crate::error::{Error, Result};

/// A dense field sampled on an `n`-dimensional grid (`n` in 1..=3) with a
/// trailing channel mode. Row-major; the channel index varies fastest, so
/// the buffer is also an `N x d` matrix with one row per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Which mode a mode product contracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Spatial(usize),
    Channel,
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if !(2..=4).contains(&shape.len()) {
        return Err(Error::contract(format!(
            "field needs 1 to 3 spatial modes plus a channel mode, got shape {shape:?}"
        )));
    }
    if shape.iter().any(|&e| e == 0) {
        return Err(Error::contract(format!(
            "field extents must be positive, got {shape:?}"
        )));
    }
    Ok(())
}

impl FieldTensor {
    /// Builds a field from external data. Rejects bad shapes, length
    /// mismatches, and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::contract(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field of shape {shape:?}")));
        }
        Ok(FieldTensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        let len = shape.iter().product();
        Ok(FieldTensor {
            shape,
            data: vec![0.0; len],
        })
    }

    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        FieldTensor { shape, data }
    }

    /// Reinterprets an `N x d` matrix as a field on `spatial`.
    pub fn from_matrix(spatial: &[usize], m: Matrix) -> Result<Self> {
        let n: usize = spatial.iter().product();
        if m.rows() != n {
            return Err(Error::contract(format!(
                "matrix has {} rows but grid {spatial:?} has {n} points",
                m.rows()
            )));
        }
        let mut shape = spatial.to_vec();
        shape.push(m.cols());
        check_shape(&shape)?;
        Ok(FieldTensor {
            shape,
            data: m.into_vec(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spatial_shape(&self) -> &[usize] {
        &self.shape[..self.shape.len() - 1]
    }

    pub fn ndim(&self) -> usize {
        self.shape.len() - 1
    }

    pub fn channels(&self) -> usize {
        *self.shape.last().unwrap()
    }

    /// Number of grid points `N`.
    pub fn points(&self) -> usize {
        self.data.len() / self.channels()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// The `N x d` point-by-channel view, copied.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_raw(self.points(), self.channels(), self.data.clone())
    }

    pub fn into_matrix(self) -> Matrix {
        let (n, d) = (self.points(), self.channels());
        Matrix::from_raw(n, d, self.data)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> FieldTensor {
        FieldTensor::from_raw(self.shape.clone(), self.data.iter().map(|v| v * alpha).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Multi-index of a grid point from its flat position.
    pub fn unravel(&self, point: usize) -> Vec<usize> {
        unravel(self.spatial_shape(), point)
    }
}

pub(crate) fn unravel(spatial: &[usize], mut point: usize) -> Vec<usize> {
    let mut idx = vec![0; spatial.len()];
    for (m, &s) in spatial.iter().enumerate().rev() {
        idx[m] = point % s;
        point /= s;
    }
    idx
}

/// Splits a shape at `mode` into (outer, extent, inner) element counts.
pub(crate) fn split_at_mode(shape: &[usize], mode: usize) -> (usize, usize, usize) {
    let outer = shape[..mode].iter().product();
    let inner = shape[mode + 1..].iter().product();
    (outer, shape[mode], inner)
}

/// Mode product `t x_mode w` with `w: J x S_mode`:
/// `out[.., j, ..] = sum_i t[.., i, ..] * w[j, i]`, summed in ascending `i`.
pub fn mode_product(t: &FieldTensor, w: &Matrix, mode: Mode) -> Result<FieldTensor> {
    let axis = match mode {
        Mode::Spatial(m) if m < t.ndim() => m,
        Mode::Spatial(m) => {
            return Err(Error::contract(format!(
                "mode {m} is not a spatial mode of a {}-d field",
                t.ndim()
            )))
        }
        Mode::Channel => t.ndim(),
    };
    let extent = t.shape[axis];
    if w.cols() != extent {
        return Err(Error::contract(format!(
            "mode product along mode {axis}: matrix has {} columns but the mode has extent {extent}",
            w.cols()
        )));
    }
    let (outer, _, inner) = split_at_mode(&t.shape, axis);
    let j_ext = w.rows();
    let mut out = vec![0.0; outer * j_ext * inner];
    counters::add(Counter::ModeProduct, (outer * j_ext * extent * inner) as u64);
    for o in 0..outer {
        let src = &t.data[o * extent * inner..(o + 1) * extent * inner];
        let dst = &mut out[o * j_ext * inner..(o + 1) * j_ext * inner];
        for j in 0..j_ext {
            let wr = w.row(j);
            let drow = &mut dst[j * inner..(j + 1) * inner];
            for (i, &wv) in wr.iter().enumerate() {
                let srow = &src[i * inner..(i + 1) * inner];
                for (d, s) in drow.iter_mut().zip(srow) {
                    *d += wv * s;
                }
            }
        }
    }
    let mut shape = t.shape.clone();
    shape[axis] = j_ext;
    Ok(FieldTensor::from_raw(shape, out))
}

/// Uniform mean over every spatial mode except `keep`: an `S_keep x d` matrix.
pub fn mean_over_axes(t: &FieldTensor, keep: usize) -> Result<Matrix> {
    if keep >= t.ndim() {
        return Err(Error::contract(format!(
            "mean pooling must keep a spatial mode; {keep} is not one of the {} spatial modes",
            t.ndim()
        )));
    }
    let d = t.channels();
    let (outer, s, inner_pts) = split_at_mode(t.spatial_shape(), keep);
    let mut out = Matrix::zeros(s, d);
    for o in 0..outer {
        for i in 0..s {
            let row = out.row_mut(i);
            let base = (o * s + i) * inner_pts;
            for r in 0..inner_pts {
                let p = base + r;
                for (acc, v) in row.iter_mut().zip(&t.data[p * d..(p + 1) * d]) {
                    *acc += v;
                }
            }
        }
    }
    out.scale(1.0 / (outer * inner_pts) as f64);
    Ok(out)
}

/// Adjoint of [`mean_over_axes`]: spreads `g` (`S_keep x d`) back over the
/// grid, each entry divided by the number of pooled points.
pub(crate) fn broadcast_mean_grad(spatial: &[usize], keep: usize, g: &Matrix, out: &mut Matrix) {
    let (outer, s, inner_pts) = split_at_mode(spatial, keep);
    let w = 1.0 / (outer * inner_pts) as f64;
    for o in 0..outer {
        for i in 0..s {
            let gr = g.row(i);
            let base = (o * s + i) * inner_pts;
            for r in 0..inner_pts {
                let dst = out.row_mut(base + r);
                for (x, gv) in dst.iter_mut().zip(gr) {
                    *x += w * gv;
                }
            }
        }
    }
}

/// Relative L2 error `||pred - reference|| / ||reference||` over all elements.
pub fn relative_l2(pred: &FieldTensor, reference: &FieldTensor) -> Result<f64> {
    Ok(relative_l2_with_grad(pred, reference, false)?.0)
}

/// Relative L2 error and, optionally, its gradient with respect to `pred`:
/// `(pred - ref) / (||pred - ref|| * ||ref||)`, taken as zero when `pred == ref`.
pub fn relative_l2_with_grad(
    pred: &FieldTensor,
    reference: &FieldTensor,
    want_grad: bool,
) -> Result<(f64, Option<FieldTensor>)> {
    if pred.shape != reference.shape {
        return Err(Error::contract(format!(
            "relative L2 needs identical shapes, got {:?} and {:?}",
            pred.shape, reference.shape
        )));
    }
    let ref_norm = reference.norm();
    if ref_norm == 0.0 {
        return Err(Error::DegenerateReference);
    }
    let diff: Vec<f64> = pred
        .data
        .iter()
        .zip(&reference.data)
        .map(|(p, r)| p - r)
        .collect();
    let diff_norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    let value = diff_norm / ref_norm;
    let grad = want_grad.then(|| {
        let scale = if diff_norm == 0.0 {
            0.0
        } else {
            1.0 / (diff_norm * ref_norm)
        };
        FieldTensor::from_raw(pred.shape.clone(), diff.iter().map(|v| v * scale).collect())
    });
    Ok((value, grad))
}
