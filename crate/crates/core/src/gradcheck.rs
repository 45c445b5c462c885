//! Central finite differences for checking hand-written backward passes.
//!
//! Errors are measured per gradient group as
//! `max_i |analytic_i - numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|)`,
//! which stays meaningful when individual entries are near zero. The
//! denominator is floored at [`FD_NOISE_FLOOR`], the round-off level of a
//! central difference at step `1e-5`, so groups whose true gradient vanishes
//! compare as absolute errors.

use crate::nn::Module;
use crate::tensor::Matrix;

/// Numerical gradient of `loss` with respect to every trainable parameter of `module`.
pub fn fd_param_grads<M: Module>(module: &mut M, step: f64, mut loss: impl FnMut(&M) -> f64) -> Vec<f64> {
    let base = module.flat_values();
    let mut values = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        values[i] = base[i] + step;
        module.set_flat_values(&values);
        let plus = loss(module);
        values[i] = base[i] - step;
        module.set_flat_values(&values);
        let minus = loss(module);
        values[i] = base[i];
        out.push((plus - minus) / (2.0 * step));
    }
    module.set_flat_values(&base);
    out
}

/// Numerical gradient of `loss` with respect to the entries of `x`.
pub fn fd_input_grad(x: &Matrix, step: f64, mut loss: impl FnMut(&Matrix) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.as_slice()[i];
        probe.as_mut_slice()[i] = orig + step;
        let plus = loss(&probe);
        probe.as_mut_slice()[i] = orig - step;
        let minus = loss(&probe);
        probe.as_mut_slice()[i] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    out
}

/// Gradient magnitude below which central differences are dominated by round-off.
pub const FD_NOISE_FLOOR: f64 = 1e-6;

/// Group-wise relative error between analytic and numeric gradients.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(FD_NOISE_FLOOR, |m, v| m.max(v.abs()));
    let worst = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    worst / scale
}

/// Sum of elementwise products; turns a layer output into a scalar probe loss.
pub fn dot(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}
