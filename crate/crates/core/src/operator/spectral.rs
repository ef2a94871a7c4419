//! Truncated real DFT used by the spectral convolution layers.
//!
//! Only the retained modes are ever materialized. Along the last axis the
//! half spectrum `ky = 0..m1` is kept; along the first axis (2D only) both
//! signs `kx = -(m0-1)..(m0-1)` are kept. The inverse reconstructs a real
//! signal as `Re(sum_k c_ky Y_k e^{+i k.x}) / N` with `c_ky = 2` except for
//! the zero and Nyquist columns.

use crate::error::{FmfError, Result};
use crate::function_space::Grid;

#[derive(Debug, Clone)]
pub struct SpectralBasis {
    n0: usize,
    n1: usize,
    kx: Vec<usize>,
    m1: usize,
    // cos/sin of 2 pi ky i1 / n1, indexed [ky * n1 + i1]
    cos1: Vec<f64>,
    sin1: Vec<f64>,
    // cos/sin of 2 pi kx i0 / n0, indexed [kxi * n0 + i0]
    cos0: Vec<f64>,
    sin0: Vec<f64>,
    // c_ky / N
    col_weight: Vec<f64>,
}

impl SpectralBasis {
    /// Largest admissible mode count on an axis with `n` points: the full
    /// real spectrum `floor(n/2) + 1`.
    pub fn max_modes(n: usize) -> usize {
        n / 2 + 1
    }

    pub fn new(grid: &Grid, modes: &[usize]) -> Result<Self> {
        if modes.len() != grid.dim() {
            return Err(FmfError::shape(format!(
                "{} mode counts for a {}-D grid",
                modes.len(),
                grid.dim()
            )));
        }
        let (n0, n1) = grid.shape2();
        let (m0, m1) = if modes.len() == 1 {
            (1, modes[0])
        } else {
            (modes[0], modes[1])
        };
        for (m, n) in [(m0, n0), (m1, n1)] {
            if m == 0 || (n > 1 && m > Self::max_modes(n)) {
                return Err(FmfError::shape(format!(
                    "{m} modes not admissible on an axis with {n} points"
                )));
            }
        }
        let mut kx: Vec<usize> = (0..m0).collect();
        if n0 > 1 {
            for k in 1..m0 {
                let neg = n0 - k;
                if !kx.contains(&neg) {
                    kx.push(neg);
                }
            }
        }
        let tau = 2.0 * std::f64::consts::PI;
        let mut cos1 = Vec::with_capacity(m1 * n1);
        let mut sin1 = Vec::with_capacity(m1 * n1);
        for ky in 0..m1 {
            for i1 in 0..n1 {
                let a = tau * ((ky * i1) % n1) as f64 / n1 as f64;
                cos1.push(a.cos());
                sin1.push(a.sin());
            }
        }
        let mut cos0 = Vec::with_capacity(kx.len() * n0);
        let mut sin0 = Vec::with_capacity(kx.len() * n0);
        for &k in &kx {
            for i0 in 0..n0 {
                let a = tau * ((k * i0) % n0) as f64 / n0 as f64;
                cos0.push(a.cos());
                sin0.push(a.sin());
            }
        }
        let npts = (n0 * n1) as f64;
        let col_weight = (0..m1)
            .map(|ky| {
                let c = if ky == 0 || (n1 % 2 == 0 && ky == n1 / 2) {
                    1.0
                } else {
                    2.0
                };
                c / npts
            })
            .collect();
        Ok(Self {
            n0,
            n1,
            kx,
            m1,
            cos1,
            sin1,
            cos0,
            sin0,
            col_weight,
        })
    }

    /// Number of retained complex modes.
    pub fn modes(&self) -> usize {
        self.kx.len() * self.m1
    }

    pub fn points(&self) -> usize {
        self.n0 * self.n1
    }

    /// `X_k = sum_p v_p e^{-i k.x_p}` for the retained modes.
    pub fn forward(&self, v: &[f64], re: &mut [f64], im: &mut [f64]) {
        let (n0, n1, m1) = (self.n0, self.n1, self.m1);
        // stage 1: along the last axis
        let mut a_re = vec![0.0; n0 * m1];
        let mut a_im = vec![0.0; n0 * m1];
        for i0 in 0..n0 {
            let row = &v[i0 * n1..(i0 + 1) * n1];
            for ky in 0..m1 {
                let c = &self.cos1[ky * n1..(ky + 1) * n1];
                let s = &self.sin1[ky * n1..(ky + 1) * n1];
                let mut sr = 0.0;
                let mut si = 0.0;
                for i1 in 0..n1 {
                    sr += row[i1] * c[i1];
                    si -= row[i1] * s[i1];
                }
                a_re[i0 * m1 + ky] = sr;
                a_im[i0 * m1 + ky] = si;
            }
        }
        // stage 2: along the first axis
        for (kxi, _) in self.kx.iter().enumerate() {
            let c = &self.cos0[kxi * n0..(kxi + 1) * n0];
            let s = &self.sin0[kxi * n0..(kxi + 1) * n0];
            for ky in 0..m1 {
                let mut sr = 0.0;
                let mut si = 0.0;
                for i0 in 0..n0 {
                    let (ar, ai) = (a_re[i0 * m1 + ky], a_im[i0 * m1 + ky]);
                    // (ar + i ai)(c - i s)
                    sr += ar * c[i0] + ai * s[i0];
                    si += ai * c[i0] - ar * s[i0];
                }
                re[kxi * m1 + ky] = sr;
                im[kxi * m1 + ky] = si;
            }
        }
    }

    /// `y_p = Re(sum_k w_ky Y_k e^{+i k.x_p})`, with `w_ky = c_ky / N` when
    /// `weighted`, else 1. The unweighted form is the adjoint of
    /// [`SpectralBasis::forward`].
    pub fn inverse(&self, re: &[f64], im: &[f64], out: &mut [f64], weighted: bool) {
        let (n0, n1, m1) = (self.n0, self.n1, self.m1);
        let mut b_re = vec![0.0; n0 * m1];
        let mut b_im = vec![0.0; n0 * m1];
        for (kxi, _) in self.kx.iter().enumerate() {
            let c = &self.cos0[kxi * n0..(kxi + 1) * n0];
            let s = &self.sin0[kxi * n0..(kxi + 1) * n0];
            for ky in 0..m1 {
                let (yr, yi) = (re[kxi * m1 + ky], im[kxi * m1 + ky]);
                for i0 in 0..n0 {
                    // (yr + i yi)(c + i s)
                    b_re[i0 * m1 + ky] += yr * c[i0] - yi * s[i0];
                    b_im[i0 * m1 + ky] += yi * c[i0] + yr * s[i0];
                }
            }
        }
        for i0 in 0..n0 {
            let row = &mut out[i0 * n1..(i0 + 1) * n1];
            row.iter_mut().for_each(|x| *x = 0.0);
            for ky in 0..m1 {
                let w = if weighted { self.col_weight[ky] } else { 1.0 };
                let br = w * b_re[i0 * m1 + ky];
                let bi = w * b_im[i0 * m1 + ky];
                let c = &self.cos1[ky * n1..(ky + 1) * n1];
                let s = &self.sin1[ky * n1..(ky + 1) * n1];
                for i1 in 0..n1 {
                    row[i1] += br * c[i1] - bi * s[i1];
                }
            }
        }
    }

    /// Adjoint of the weighted inverse: `Ybar_k = (c_ky / N) sum_p ybar_p e^{-i k.x_p}`.
    pub fn inverse_adjoint(&self, ybar: &[f64], re: &mut [f64], im: &mut [f64]) {
        self.forward(ybar, re, im);
        let m1 = self.m1;
        for (idx, (r, i)) in re.iter_mut().zip(im.iter_mut()).enumerate() {
            let w = self.col_weight[idx % m1];
            *r *= w;
            *i *= w;
        }
    }

    /// Spectral convolution of `cin` channels into `cout` channels with
    /// complex weights laid out `[mode][out][in][re, im]`.
    pub fn convolve(&self, weights: &[f64], h: &[f64], cin: usize, cout: usize) -> Vec<f64> {
        let npts = self.points();
        let nm = self.modes();
        let mut xr = vec![0.0; cin * nm];
        let mut xi = vec![0.0; cin * nm];
        for c in 0..cin {
            self.forward(
                &h[c * npts..(c + 1) * npts],
                &mut xr[c * nm..(c + 1) * nm],
                &mut xi[c * nm..(c + 1) * nm],
            );
        }
        let (yr, yi) = mix(weights, &xr, &xi, cin, cout, nm);
        let mut out = vec![0.0; cout * npts];
        for o in 0..cout {
            self.inverse(
                &yr[o * nm..(o + 1) * nm],
                &yi[o * nm..(o + 1) * nm],
                &mut out[o * npts..(o + 1) * npts],
                true,
            );
        }
        out
    }
}

/// `Y[o][m] = sum_i R[m][o][i] X[i][m]`.
pub(crate) fn mix(
    weights: &[f64],
    xr: &[f64],
    xi: &[f64],
    cin: usize,
    cout: usize,
    nm: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut yr = vec![0.0; cout * nm];
    let mut yi = vec![0.0; cout * nm];
    for m in 0..nm {
        let wm = &weights[m * cout * cin * 2..(m + 1) * cout * cin * 2];
        for o in 0..cout {
            let wo = &wm[o * cin * 2..(o + 1) * cin * 2];
            let mut sr = 0.0;
            let mut si = 0.0;
            for i in 0..cin {
                let (wr, wi) = (wo[2 * i], wo[2 * i + 1]);
                let (ar, ai) = (xr[i * nm + m], xi[i * nm + m]);
                sr += wr * ar - wi * ai;
                si += wr * ai + wi * ar;
            }
            yr[o * nm + m] = sr;
            yi[o * nm + m] = si;
        }
    }
    (yr, yi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn identity_weights(nm: usize, c: usize) -> Vec<f64> {
        let mut w = vec![0.0; nm * c * c * 2];
        for m in 0..nm {
            for o in 0..c {
                w[((m * c + o) * c + o) * 2] = 1.0;
            }
        }
        w
    }

    #[test]
    fn full_spectrum_identity_weights_is_identity() {
        let mut rng = rng_from_seed(1);
        for res in [vec![16], vec![15], vec![8, 6], vec![7, 9]] {
            let grid = Grid::new(&res).unwrap();
            let modes: Vec<usize> = res.iter().map(|&n| SpectralBasis::max_modes(n)).collect();
            let basis = SpectralBasis::new(&grid, &modes).unwrap();
            let c = 3;
            let h: Vec<f64> = (0..c * grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = basis.convolve(&identity_weights(basis.modes(), c), &h, c, c);
            for (a, b) in h.iter().zip(&out) {
                assert!((a - b).abs() < 1e-12, "{res:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn truncation_removes_high_modes() {
        let grid = Grid::line(16).unwrap();
        let basis = SpectralBasis::new(&grid, &[3]).unwrap();
        let high: Vec<f64> = (0..16)
            .map(|i| (2.0 * std::f64::consts::PI * 5.0 * i as f64 / 16.0).cos())
            .collect();
        let out = basis.convolve(&identity_weights(3, 1), &high, 1, 1);
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn adjoints_are_consistent() {
        // <F v, X> = <v, F^H X> and <G Y, y> = <Y, G^H y> in the real sense
        let mut rng = rng_from_seed(2);
        let grid = Grid::plane(6, 8).unwrap();
        let basis = SpectralBasis::new(&grid, &[3, 4]).unwrap();
        let (np, nm) = (basis.points(), basis.modes());
        let v: Vec<f64> = (0..np).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xr: Vec<f64> = (0..nm).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xi: Vec<f64> = (0..nm).map(|_| rng.random_range(-1.0..1.0)).collect();

        let (mut fr, mut fi) = (vec![0.0; nm], vec![0.0; nm]);
        basis.forward(&v, &mut fr, &mut fi);
        let lhs: f64 = (0..nm).map(|m| fr[m] * xr[m] + fi[m] * xi[m]).sum();
        let mut adj = vec![0.0; np];
        basis.inverse(&xr, &xi, &mut adj, false);
        let rhs: f64 = v.iter().zip(&adj).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);

        let mut y = vec![0.0; np];
        basis.inverse(&xr, &xi, &mut y, true);
        let lhs: f64 = y.iter().zip(&v).map(|(a, b)| a * b).sum();
        let (mut ar, mut ai) = (vec![0.0; nm], vec![0.0; nm]);
        basis.inverse_adjoint(&v, &mut ar, &mut ai);
        let rhs: f64 = (0..nm).map(|m| ar[m] * xr[m] + ai[m] * xi[m]).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn inadmissible_modes_are_rejected() {
        let grid = Grid::line(16).unwrap();
        assert!(SpectralBasis::new(&grid, &[10]).is_err());
        assert!(SpectralBasis::new(&grid, &[0]).is_err());
        assert!(SpectralBasis::new(&grid, &[4, 4]).is_err());
    }
}
