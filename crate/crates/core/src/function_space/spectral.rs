//! Periodic Fourier-domain filters: heat-kernel mollification and its
//! Wiener-filter inverse.
//!
//! Frequencies are measured in radians per pixel, `omega = 2 pi k / n`, so
//! a smoothing parameter `l` is expressed in pixel units.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::FunctionSample;

/// Multiplies every channel's periodic spectrum by `gain(omega^2)`.
pub fn apply_fourier_multiplier(f: &FunctionSample, gain: impl Fn(f64) -> f64) -> FunctionSample {
    let (n0, n1) = f.grid().shape2();
    let npts = n0 * n1;
    let mut planner = FftPlanner::<f64>::new();
    let fwd0 = planner.plan_fft_forward(n0);
    let inv0 = planner.plan_fft_inverse(n0);
    let fwd1 = planner.plan_fft_forward(n1);
    let inv1 = planner.plan_fft_inverse(n1);

    let omega = |k: usize, n: usize| {
        let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        2.0 * std::f64::consts::PI * signed / n as f64
    };

    let mut out = Vec::with_capacity(f.values().len());
    let mut col = vec![Complex64::new(0.0, 0.0); n0];
    for c in 0..f.channels() {
        let mut buf: Vec<Complex64> = f
            .channel(c)
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        for row in buf.chunks_mut(n1) {
            fwd1.process(row);
        }
        if n0 > 1 {
            for j in 0..n1 {
                for i in 0..n0 {
                    col[i] = buf[i * n1 + j];
                }
                fwd0.process(&mut col);
                for i in 0..n0 {
                    buf[i * n1 + j] = col[i];
                }
            }
        }
        for i in 0..n0 {
            let w0 = if n0 > 1 { omega(i, n0) } else { 0.0 };
            for j in 0..n1 {
                let w1 = omega(j, n1);
                buf[i * n1 + j] *= gain(w0 * w0 + w1 * w1);
            }
        }
        if n0 > 1 {
            for j in 0..n1 {
                for i in 0..n0 {
                    col[i] = buf[i * n1 + j];
                }
                inv0.process(&mut col);
                for i in 0..n0 {
                    buf[i * n1 + j] = col[i];
                }
            }
        }
        for row in buf.chunks_mut(n1) {
            inv1.process(row);
        }
        out.extend(buf.iter().map(|z| z.re / npts as f64));
    }
    FunctionSample::from_parts_unchecked(f.grid().clone(), f.channels(), out)
}

/// Periodic convolution with the heat kernel `K(y, l)`, whose Fourier
/// multiplier is `exp(-omega^2 l)`.
pub fn mollify(f: &FunctionSample, l: f64) -> FunctionSample {
    assert!(l > 0.0, "mollification parameter must be positive");
    apply_fourier_multiplier(f, |w2| (-w2 * l).exp())
}

/// Approximate inverse of [`mollify`]: gain `e^{-w^2 l} / (e^{-2 w^2 l} + eps^2)`.
pub fn wiener_sharpen(h: &FunctionSample, l: f64, eps: f64) -> FunctionSample {
    assert!(l > 0.0 && eps > 0.0, "l and eps must be positive");
    apply_fourier_multiplier(h, |w2| {
        let a = (-w2 * l).exp();
        a / (a * a + eps * eps)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_space::{norm_sq, Grid};
    use std::f64::consts::PI;

    /// Periodic mode on the sample index, `cos(2 pi k i / n)`.
    fn mode(grid: &Grid, k: usize, phase: f64) -> FunctionSample {
        let n = grid.len();
        let v = (0..n)
            .map(|i| (2.0 * PI * k as f64 * i as f64 / n as f64 + phase).cos())
            .collect();
        FunctionSample::new(grid.clone(), 1, v).unwrap()
    }

    fn band_limited(grid: &Grid) -> FunctionSample {
        let mut f = mode(grid, 1, 0.3);
        f.axpy(0.5, &mode(grid, 3, 1.1)).unwrap();
        f.axpy(-0.25, &mode(grid, 5, 2.0)).unwrap();
        f.map(|v| v + 0.7)
    }

    fn rel_l2(a: &FunctionSample, b: &FunctionSample) -> f64 {
        (norm_sq(&a.sub(b).unwrap()) / norm_sq(b)).sqrt()
    }

    #[test]
    fn constant_is_preserved() {
        for g in [Grid::line(32).unwrap(), Grid::plane(8, 12).unwrap()] {
            let c = FunctionSample::constant(&g, 1, 2.5);
            let m = mollify(&c, 3.0);
            assert!(m.max_abs_diff(&c).unwrap() < 1e-10);
        }
    }

    #[test]
    fn mean_is_preserved() {
        let g = Grid::plane(8, 8).unwrap();
        let f = FunctionSample::from_fn(&g, |x| x[0] * x[1] + (5.0 * x[0]).sin());
        let m = mollify(&f, 2.0);
        let mean = |s: &FunctionSample| s.values().iter().sum::<f64>() / s.values().len() as f64;
        assert!((mean(&f) - mean(&m)).abs() < 1e-12);
    }

    #[test]
    fn semigroup_property() {
        let g = Grid::line(64).unwrap();
        let f = FunctionSample::from_fn(&g, |x| (9.0 * x[0]).sin() + x[0] * x[0]);
        let twice = mollify(&mollify(&f, 0.7), 0.7);
        let once = mollify(&f, 1.4);
        assert!(twice.max_abs_diff(&once).unwrap() < 1e-8);
    }

    #[test]
    fn high_frequencies_attenuate_more() {
        let g = Grid::line(128).unwrap();
        let low = FunctionSample::from_fn(&g, |x| (2.0 * PI * x[0]).sin());
        let high = FunctionSample::from_fn(&g, |x| (2.0 * PI * 32.0 * x[0]).sin());
        let r_low = (norm_sq(&mollify(&low, 1.0)) / norm_sq(&low)).sqrt();
        let r_high = (norm_sq(&mollify(&high, 1.0)) / norm_sq(&high)).sqrt();
        assert!(r_high < 0.5 * r_low, "{r_high} vs {r_low}");
    }

    #[test]
    fn sharpen_inverts_mollify_on_band_limited() {
        let g = Grid::line(64).unwrap();
        let f = band_limited(&g);
        let back = wiener_sharpen(&mollify(&f, 1.0), 1.0, 1e-10);
        assert!(back.max_abs_diff(&f).unwrap() < 1e-6);
        // both compositions at eps = 1e-6
        let a = mollify(&wiener_sharpen(&f, 1.0, 1e-6), 1.0);
        let b = wiener_sharpen(&mollify(&f, 1.0), 1.0, 1e-6);
        assert!(rel_l2(&a, &f) < 1e-4);
        assert!(rel_l2(&b, &f) < 1e-4);
    }

    #[test]
    fn sharpen_in_2d() {
        let g = Grid::plane(16, 16).unwrap();
        let n = 16.0;
        let f = FunctionSample::new(
            g.clone(),
            1,
            (0..256)
                .map(|p| {
                    let (i, j) = ((p / 16) as f64, (p % 16) as f64);
                    (2.0 * PI * i / n).cos() + (2.0 * PI * 2.0 * j / n).sin()
                })
                .collect(),
        )
        .unwrap();
        let back = wiener_sharpen(&mollify(&f, 1.0), 1.0, 1e-10);
        assert!(back.max_abs_diff(&f).unwrap() < 1e-6);
    }

    #[test]
    fn large_eps_never_amplifies() {
        let g = Grid::line(32).unwrap();
        for k in 0..16 {
            let f = mode(&g, k, 0.2);
            let s = wiener_sharpen(&f, 1.0, 1.0);
            assert!(norm_sq(&s) <= norm_sq(&f) * (1.0 + 1e-12), "mode {k}");
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let g = Grid::line(16).unwrap();
        let z = FunctionSample::zeros(&g, 2);
        assert_eq!(wiener_sharpen(&z, 1.0, 0.1), z);
        assert_eq!(mollify(&z, 1.0), z);
    }
}
