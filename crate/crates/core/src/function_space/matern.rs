use nalgebra::{DMatrix, DVector};

use super::Grid;
use crate::error::{FmfError, Result};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// Matérn covariance `k(d; nu, length, variance)`.
///
/// Half-integer orders 1/2, 3/2 and 5/2 use their closed forms; any other
/// order goes through the modified Bessel function of the second kind.
pub fn matern_kernel(d: f64, nu: f64, length: f64, variance: f64) -> f64 {
    let d = d.abs();
    if d == 0.0 {
        return variance;
    }
    let r = d / length;
    if (nu - 0.5).abs() < 1e-12 {
        variance * (-r).exp()
    } else if (nu - 1.5).abs() < 1e-12 {
        let a = 3f64.sqrt() * r;
        variance * (1.0 + a) * (-a).exp()
    } else if (nu - 2.5).abs() < 1e-12 {
        let a = 5f64.sqrt() * r;
        variance * (1.0 + a + a * a / 3.0) * (-a).exp()
    } else {
        matern_kernel_bessel(d, nu, length, variance)
    }
}

/// Matérn covariance evaluated through `K_nu` for any order, without the
/// half-integer shortcuts.
pub fn matern_kernel_bessel(d: f64, nu: f64, length: f64, variance: f64) -> f64 {
    let d = d.abs();
    if d == 0.0 {
        return variance;
    }
    let x = (2.0 * nu).sqrt() * d / length;
    let log_pref = (1.0 - nu) * std::f64::consts::LN_2 - libm::lgamma(nu) + nu * x.ln();
    let k = bessel_k(nu, x);
    if k == 0.0 {
        return 0.0;
    }
    variance * (log_pref + k.ln()).exp()
}

/// Modified Bessel function of the second kind via
/// `K_nu(x) = int_0^inf exp(-x cosh s) cosh(nu s) ds`.
///
/// The integrand decays double-exponentially, so the trapezoid rule on a
/// truncated range is spectrally accurate.
fn bessel_k(nu: f64, x: f64) -> f64 {
    // Work with the integrand scaled by exp(x) to avoid underflow at large x.
    let integrand = |s: f64| (-x * (s.cosh() - 1.0) + nu * s).exp() * 0.5 * (1.0 + (-2.0 * nu * s).exp());
    let mut upper = 1.0;
    while integrand(upper) > 1e-18 && upper < 200.0 {
        upper *= 1.5;
    }
    let n = 4000;
    let h = upper / n as f64;
    let mut sum = 0.5 * (integrand(0.0) + integrand(upper));
    for i in 1..n {
        sum += integrand(i as f64 * h);
    }
    sum * h * (-x).exp()
}

/// Dense Matérn covariance on a grid together with its jittered Cholesky
/// factor.
#[derive(Debug, Clone)]
pub struct MaternCovariance {
    grid: Grid,
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
    jitter: f64,
}

impl MaternCovariance {
    pub fn new(grid: &Grid, nu: f64, length: f64, variance: f64, cap: usize) -> Result<Self> {
        let n = grid.len();
        if n > cap {
            return Err(FmfError::Capacity(format!(
                "dense Matérn covariance needs {n} points, cap is {cap}"
            )));
        }
        let coords = grid.coords();
        let covariance = DMatrix::from_fn(n, n, |i, j| {
            let d2: f64 = coords[i]
                .iter()
                .zip(&coords[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            matern_kernel(d2.sqrt(), nu, length, variance)
        });
        let mut jitter = JITTER_START;
        loop {
            let mut m = covariance.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(ch) = m.cholesky() {
                return Ok(Self {
                    grid: grid.clone(),
                    covariance,
                    factor: ch.l(),
                    jitter,
                });
            }
            jitter *= 10.0;
            if jitter > JITTER_MAX * (1.0 + 1e-9) {
                return Err(FmfError::numerical(format!(
                    "Matérn covariance not positive definite up to jitter {JITTER_MAX:e}"
                )));
            }
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Covariance without jitter.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower Cholesky factor of `covariance + jitter * I`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `L z` for a standard-normal vector `z`.
    pub fn correlate(&self, z: &[f64]) -> Vec<f64> {
        let z = DVector::from_column_slice(z);
        (&self.factor * z).as_slice().to_vec()
    }

    /// Solves `L w = x`, so that `<w, w>` is the precision-weighted norm of `x`.
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let mut w = DVector::from_column_slice(x);
        self.factor.solve_lower_triangular_mut(&mut w);
        w.as_slice().to_vec()
    }
}
