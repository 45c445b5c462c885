//! Helpers shared by unit tests.

use rand::Rng;

pub use crate::gradcheck::{dot, fd_input_grad, fd_param_grads, relative_error};
use crate::tensor::{FieldTensor, Matrix};

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_field(shape: &[usize], rng: &mut impl Rng) -> FieldTensor {
    let len = shape.iter().product();
    FieldTensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap()
}

#[track_caller]
pub fn assert_grads_close(analytic: &[f64], numeric: &[f64], tol: f64, what: &str) {
    let err = relative_error(analytic, numeric);
    assert!(err <= tol, "{what}: relative gradient error {err:e} exceeds {tol:e}");
}
