use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::FieldTensor;

/// Fourier coefficients of a real field on the periodic square `[0, 2pi)^2`,
/// stored in real-FFT layout: `S` rows of wavenumber `k1` (wrapped, so row
/// `r >= S/2` is `k1 = r - S`) by `S/2 + 1` columns of `k2 >= 0`.
///
/// The field is `u(x) = sum_k c_k exp(i k . x)` with `x = 2 pi (i, j) / S`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    s: usize,
    coeffs: Vec<Complex64>,
}

fn wrap(r: usize, s: usize) -> i64 {
    if r < s / 2 {
        r as i64
    } else {
        r as i64 - s as i64
    }
}

impl SpectralField {
    pub fn zeros(s: usize) -> Result<Self> {
        if s < 2 || s % 2 != 0 {
            return Err(Error::Config(format!("spectral grid size must be even and >= 2, got {s}")));
        }
        Ok(SpectralField {
            s,
            coeffs: vec![Complex64::new(0.0, 0.0); s * (s / 2 + 1)],
        })
    }

    pub fn size(&self) -> usize {
        self.s
    }

    fn cols(&self) -> usize {
        self.s / 2 + 1
    }

    /// Integer wavenumber of storage slot `(r, c)`.
    pub fn wavenumber(&self, r: usize, c: usize) -> (i64, i64) {
        (wrap(r, self.s), c as i64)
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.coeffs[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        let cols = self.cols();
        self.coeffs[r * cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Single real mode `amp * cos(k . x)`, split as `amp/2` on `k` and its conjugate.
    pub fn single_mode(s: usize, k1: i64, k2: i64, amp: f64) -> Result<Self> {
        let mut f = SpectralField::zeros(s)?;
        if k2 < 0 || k2 as usize >= s / 2 || k1.unsigned_abs() as usize >= s / 2 {
            return Err(Error::Config(format!("mode ({k1}, {k2}) is not representable below Nyquist on {s}")));
        }
        let r = k1.rem_euclid(s as i64) as usize;
        if k2 == 0 {
            let rc = (-k1).rem_euclid(s as i64) as usize;
            f.set(r, 0, Complex64::new(amp / 2.0, 0.0));
            let cur = f.get(rc, 0);
            f.set(rc, 0, cur + Complex64::new(amp / 2.0, 0.0));
        } else {
            f.set(r, k2 as usize, Complex64::new(amp / 2.0, 0.0));
        }
        Ok(f)
    }

    /// Every stored coefficient multiplied by `g(k1, k2)`.
    pub fn map_modes(&self, g: impl Fn(i64, i64) -> Complex64) -> SpectralField {
        let mut out = self.clone();
        for r in 0..self.s {
            for c in 0..self.cols() {
                let (k1, k2) = self.wavenumber(r, c);
                out.set(r, c, self.get(r, c) * g(k1, k2));
            }
        }
        out
    }

    /// The full `S x S` spectrum, filling negative `k2` by conjugate symmetry.
    fn full_spectrum(&self) -> Vec<Complex64> {
        let s = self.s;
        let mut full = vec![Complex64::new(0.0, 0.0); s * s];
        for r in 0..s {
            for c in 0..s {
                full[r * s + c] = if c <= s / 2 {
                    self.get(r, c)
                } else {
                    self.get((s - r) % s, s - c).conj()
                };
            }
        }
        full
    }

    /// Inverse transform by direct separable summation, keeping the imaginary part.
    pub fn to_physical_complex(&self) -> Vec<Complex64> {
        let s = self.s;
        let twiddle: Vec<Complex64> = (0..s).map(|m| Complex64::from_polar(1.0, 2.0 * PI * m as f64 / s as f64)).collect();
        let full = self.full_spectrum();
        // Along axis 1: tmp[r][j] = sum_c full[r][c] e^{i k2 y_j}
        let mut tmp = vec![Complex64::new(0.0, 0.0); s * s];
        for r in 0..s {
            for j in 0..s {
                let mut acc = Complex64::new(0.0, 0.0);
                for c in 0..s {
                    let k2 = wrap(c, s);
                    acc += full[r * s + c] * twiddle[(k2 * j as i64).rem_euclid(s as i64) as usize];
                }
                tmp[r * s + j] = acc;
            }
        }
        let mut out = vec![Complex64::new(0.0, 0.0); s * s];
        for i in 0..s {
            for j in 0..s {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..s {
                    let k1 = wrap(r, s);
                    acc += tmp[r * s + j] * twiddle[(k1 * i as i64).rem_euclid(s as i64) as usize];
                }
                out[i * s + j] = acc;
            }
        }
        out
    }

    /// Real field of shape `[S, S, 1]`.
    pub fn to_physical(&self) -> FieldTensor {
        let data = self.to_physical_complex().into_iter().map(|c| c.re).collect();
        FieldTensor::new(vec![self.s, self.s, 1], data).expect("finite spectrum gives a finite field")
    }
}

/// Gaussian random field with spectrum `(1 + |k|^2)^(-alpha)`, cut off at
/// `|k| <= k_max`, zero mean and zero Nyquist modes. Deterministic in `seed`.
pub fn sample_initial(seed: u64, s: usize, alpha: f64, k_max: usize) -> Result<SpectralField> {
    let mut f = SpectralField::zeros(s)?;
    if k_max > s / 2 {
        return Err(Error::Config(format!("k_max {k_max} exceeds S/2 = {}", s / 2)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = s / 2 + 1;
    let cut = (k_max * k_max) as i64;
    for r in 0..s {
        for c in 0..cols {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let (k1, k2) = f.wavenumber(r, c);
            let k2sq = k1 * k1 + k2 * k2;
            let nyquist = r == s / 2 || c == s / 2;
            if k2sq == 0 || k2sq > cut || nyquist {
                continue;
            }
            let sigma = (1.0 + k2sq as f64).powf(-alpha);
            f.set(r, c, Complex64::new(a, b) * (sigma / 2f64.sqrt()));
        }
    }
    // Column k2 = 0 holds both k1 and -k1: keep k1 > 0 and mirror its conjugate.
    for r in s / 2 + 1..s {
        let v = f.get(s - r, 0).conj();
        f.set(r, 0, v);
    }
    Ok(f)
}

/// `c_k(t) = c_k(0) exp(-nu |k|^2 t - i (k . c) t)`, the exact solution of
/// `u_t + c . grad u = nu lap u` on the periodic square.
pub fn evolve(u0: &SpectralField, nu: f64, c: [f64; 2], t: f64) -> SpectralField {
    u0.map_modes(|k1, k2| {
        let (k1, k2) = (k1 as f64, k2 as f64);
        Complex64::new(-nu * (k1 * k1 + k2 * k2) * t, -(k1 * c[0] + k2 * c[1]) * t).exp()
    })
}

pub fn exact_solution(u0: &SpectralField, nu: f64, c: [f64; 2], t: f64) -> FieldTensor {
    evolve(u0, nu, c, t).to_physical()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::relative_l2;

    #[test]
    fn zero_cutoff_gives_zero_field() {
        let f = sample_initial(3, 16, 2.5, 0).unwrap();
        assert!(f.to_physical().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sampling_is_deterministic_and_real() {
        let a = sample_initial(9, 16, 2.5, 8).unwrap();
        assert_eq!(a, sample_initial(9, 16, 2.5, 8).unwrap());
        assert_ne!(a, sample_initial(10, 16, 2.5, 8).unwrap());
        let phys = a.to_physical_complex();
        assert!(phys.iter().all(|c| c.im.abs() <= 1e-12));
        assert!(phys.iter().any(|c| c.re.abs() > 1e-3));
    }

    #[test]
    fn zero_time_is_initial_field() {
        let a = sample_initial(1, 16, 2.5, 6).unwrap();
        assert_eq!(exact_solution(&a, 0.01, [1.0, 0.5], 0.0), a.to_physical());
    }

    #[test]
    fn single_mode_decay() {
        let u0 = SpectralField::single_mode(16, 1, 0, 1.0).unwrap();
        let phys = u0.to_physical();
        for i in 0..16 {
            let x = 2.0 * PI * i as f64 / 16.0;
            assert!((phys.as_slice()[i * 16] - x.cos()).abs() < 1e-13);
        }
        let later = exact_solution(&u0, 0.1, [0.0, 0.0], 1.0);
        let ratio = later.norm() / phys.norm();
        assert!((ratio - (-0.1f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn pure_advection_preserves_norm() {
        let u0 = sample_initial(4, 32, 2.5, 8).unwrap();
        let a = u0.to_physical().norm();
        let b = exact_solution(&u0, 0.0, [1.0, 0.5], 0.73).norm();
        assert!((a - b).abs() / a <= 1e-10);
    }

    #[test]
    fn semigroup_property() {
        let u0 = sample_initial(5, 16, 2.5, 8).unwrap();
        let (nu, c) = (0.05, [1.0, -0.3]);
        let direct = exact_solution(&u0, nu, c, 0.5);
        let two = exact_solution(&evolve(&u0, nu, c, 0.2), nu, c, 0.3);
        assert!(relative_l2(&two, &direct).unwrap() <= 1e-10);
    }
}
