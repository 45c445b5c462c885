use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Sweep limit of the one-sided Jacobi iteration.
pub const JACOBI_MAX_SWEEPS: usize = 60;
/// A column pair counts as orthogonal below this cosine (or `rows * eps`, if larger).
pub const JACOBI_TOL: f64 = 1e-15;
pub const OVERSAMPLING: usize = 8;
pub const POWER_ITERATIONS: usize = 10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Columns of `a` (or of `a^T` when `a` is wide), so that there are at most as many columns as rows.
fn tall_columns(a: &Matrix) -> Vec<Vec<f64>> {
    let (m, n) = a.shape();
    if m >= n {
        (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect()
    } else {
        (0..m).map(|i| a.row(i).to_vec()).collect()
    }
}

/// Singular values in descending order by one-sided (Hestenes) Jacobi:
/// plane rotations orthogonalize the columns, whose norms are then the
/// singular values.
pub fn jacobi_singular_values(a: &Matrix) -> Result<Vec<f64>> {
    if !a.is_finite() {
        return Err(Error::NonFinite("SVD input".into()));
    }
    let mut cols = tall_columns(a);
    let n = cols.len();
    let m = cols.first().map_or(0, Vec::len);
    let tol = JACOBI_TOL.max(m as f64 * f64::EPSILON);
    // Columns below this squared norm are round-off of a rank-deficient input.
    let fro2: f64 = cols.iter().map(|c| dot(c, c)).sum();
    let negligible = (f64::EPSILON * f64::EPSILON) * fro2;
    let mut worst = 0.0;
    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        worst = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let (left, right) = cols.split_at_mut(q);
                let (cp, cq) = (&mut left[p], &mut right[0]);
                let alpha = dot(cp, cp);
                let beta = dot(cq, cq);
                let gamma = dot(cp, cq);
                if gamma == 0.0 || alpha <= negligible || beta <= negligible {
                    continue;
                }
                let cosine = gamma.abs() / (alpha * beta).sqrt();
                worst = worst.max(cosine);
                if cosine <= tol {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let (xv, yv) = (*x, *y);
                    *x = c * xv - s * yv;
                    *y = s * xv + c * yv;
                }
            }
        }
        if worst <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical {
            detail: format!("Jacobi SVD did not converge in {JACOBI_MAX_SWEEPS} sweeps"),
            residual: worst,
        });
    }
    let mut sigma: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    sigma.sort_by(|a, b| b.total_cmp(a));
    Ok(sigma)
}

/// Orthonormalizes the columns of `y` in place by twice-repeated modified
/// Gram-Schmidt. Columns that vanish (rank deficiency) are set to zero.
fn orthonormalize(y: &mut Matrix) {
    let (m, l) = y.shape();
    let mut cols: Vec<Vec<f64>> = (0..l).map(|j| (0..m).map(|i| y.get(i, j)).collect()).collect();
    for j in 0..l {
        let norm0 = dot(&cols[j], &cols[j]).sqrt();
        for _ in 0..2 {
            for i in 0..j {
                let (done, rest) = cols.split_at_mut(j);
                let r = dot(&done[i], &rest[0]);
                rest[0].iter_mut().zip(&done[i]).for_each(|(v, q)| *v -= r * q);
            }
        }
        let norm = dot(&cols[j], &cols[j]).sqrt();
        if norm <= 1e-12 * norm0.max(f64::MIN_POSITIVE) || norm == 0.0 {
            cols[j].fill(0.0);
        } else {
            cols[j].iter_mut().for_each(|v| *v /= norm);
        }
    }
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            y.set(i, j, *v);
        }
    }
}

/// Top-`r` singular values by a randomized range finder with
/// [`OVERSAMPLING`] extra columns and [`POWER_ITERATIONS`] power steps.
pub fn randomized_singular_values(a: &Matrix, r: usize, seed: u64) -> Result<Vec<f64>> {
    let (m, n) = a.shape();
    if r == 0 || r > m.min(n) {
        return Err(Error::contract(format!("truncation rank {r} for a {m} x {n} matrix")));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("SVD input".into()));
    }
    let l = (r + OVERSAMPLING).min(m.min(n));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = Matrix::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng));
    let at = a.transpose();
    let mut q = a.matmul(&omega)?;
    orthonormalize(&mut q);
    for _ in 0..POWER_ITERATIONS {
        let mut z = at.matmul(&q)?;
        orthonormalize(&mut z);
        q = a.matmul(&z)?;
        orthonormalize(&mut q);
    }
    let b = q.transpose().matmul(a)?;
    let mut sigma = jacobi_singular_values(&b)?;
    sigma.truncate(r);
    Ok(sigma)
}
