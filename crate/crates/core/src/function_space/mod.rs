//! Discretized functions on uniform grids over `[0,1]^d`.
//!
//! A [`FunctionSample`] stores channel-major values on a [`Grid`]. Inner
//! products use mean-over-points quadrature on the unit domain, so norms are
//! consistent across resolutions.

mod matern;
mod noise;
mod spectral;

pub use matern::{matern_kernel, matern_kernel_bessel, MaternCovariance};
pub use noise::{
    sample_grid_interp, sample_matern, sample_mollified_white, NoiseSampler, NoiseSpec,
    DEFAULT_DENSE_CAP,
};
pub use spectral::{apply_fourier_multiplier, mollify, wiener_sharpen};

use crate::error::{FmfError, Result};

/// Uniform lattice over `[0,1]^dim` including both endpoints on every axis.
///
/// Points are stored row-major: point `p = i0 * n1 + i1` in 2D.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Grid {
    resolution: Vec<usize>,
}

impl Grid {
    pub fn new(resolution: &[usize]) -> Result<Self> {
        if resolution.is_empty() || resolution.len() > 2 {
            return Err(FmfError::param(format!(
                "grid dimension must be 1 or 2, got {}",
                resolution.len()
            )));
        }
        if let Some(n) = resolution.iter().find(|&&n| n < 2) {
            return Err(FmfError::param(format!(
                "every axis needs at least 2 points, got {n}"
            )));
        }
        Ok(Self {
            resolution: resolution.to_vec(),
        })
    }

    /// 1D grid with `n` points.
    pub fn line(n: usize) -> Result<Self> {
        Self::new(&[n])
    }

    /// 2D grid with `n0 x n1` points.
    pub fn plane(n0: usize, n1: usize) -> Result<Self> {
        Self::new(&[n0, n1])
    }

    pub fn dim(&self) -> usize {
        self.resolution.len()
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shape as `(n0, n1)`; a 1D grid is treated as a single row `(1, n)`.
    pub fn shape2(&self) -> (usize, usize) {
        match self.resolution.as_slice() {
            [n] => (1, *n),
            [n0, n1] => (*n0, *n1),
            _ => unreachable!("grid dimension is validated on construction"),
        }
    }

    /// Spacing between neighbouring points along `axis`.
    pub fn spacing(&self, axis: usize) -> f64 {
        1.0 / (self.resolution[axis] - 1) as f64
    }

    /// Coordinate of every point along `axis`.
    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        let h = self.spacing(axis);
        match self.resolution.as_slice() {
            [n] => (0..*n).map(|i| i as f64 * h).collect(),
            [n0, n1] => {
                let mut out = Vec::with_capacity(n0 * n1);
                for i0 in 0..*n0 {
                    for i1 in 0..*n1 {
                        let i = if axis == 0 { i0 } else { i1 };
                        out.push(i as f64 * h);
                    }
                }
                out
            }
            _ => unreachable!(),
        }
    }

    /// Coordinates of every point, one `Vec` of length `dim` per point.
    pub fn coords(&self) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim()).map(|a| self.axis_coords(a)).collect();
        (0..self.len())
            .map(|p| axes.iter().map(|ax| ax[p]).collect())
            .collect()
    }

    /// Domain volume of `[0,1]^dim`.
    pub fn volume(&self) -> f64 {
        1.0
    }
}

/// A function discretized on a grid, with `channels` values per point.
///
/// Values are laid out channel-major: `values[c * points + p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSample {
    grid: Grid,
    channels: usize,
    values: Vec<f64>,
}

impl FunctionSample {
    pub fn new(grid: Grid, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(FmfError::shape("a function needs at least one channel"));
        }
        if values.len() != channels * grid.len() {
            return Err(FmfError::shape(format!(
                "expected {} values ({} channels x {} points), got {}",
                channels * grid.len(),
                channels,
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FmfError::numerical("function values must be finite"));
        }
        Ok(Self {
            grid,
            channels,
            values,
        })
    }

    pub fn zeros(grid: &Grid, channels: usize) -> Self {
        Self {
            grid: grid.clone(),
            channels,
            values: vec![0.0; channels * grid.len()],
        }
    }

    pub fn constant(grid: &Grid, channels: usize, c: f64) -> Self {
        Self {
            grid: grid.clone(),
            channels,
            values: vec![c; channels * grid.len()],
        }
    }

    /// Single-channel function evaluated pointwise from its coordinates.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = grid.coords().iter().map(|x| f(x)).collect();
        Self {
            grid: grid.clone(),
            channels: 1,
            values,
        }
    }

    pub(crate) fn from_parts_unchecked(grid: Grid, channels: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), channels * grid.len());
        Self {
            grid,
            channels,
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn points(&self) -> usize {
        self.grid.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.points();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Errors unless `other` lives on the same grid with the same channels.
    pub fn check_compatible(&self, other: &FunctionSample) -> Result<()> {
        if self.grid != other.grid {
            return Err(FmfError::shape(format!(
                "grid mismatch: {:?} vs {:?}",
                self.grid.resolution(),
                other.grid.resolution()
            )));
        }
        if self.channels != other.channels {
            return Err(FmfError::shape(format!(
                "channel mismatch: {} vs {}",
                self.channels, other.channels
            )));
        }
        Ok(())
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts_unchecked(
            self.grid.clone(),
            self.channels,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &FunctionSample, b: f64) -> Result<Self> {
        self.check_compatible(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Self::from_parts_unchecked(
            self.grid.clone(),
            self.channels,
            values,
        ))
    }

    pub fn add(&self, other: &FunctionSample) -> Result<Self> {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &FunctionSample) -> Result<Self> {
        self.lin_comb(1.0, other, -1.0)
    }

    /// In-place `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &FunctionSample) -> Result<()> {
        self.check_compatible(x)?;
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &FunctionSample) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Discrete L2 inner product: mean over points and channels, times the
/// domain volume.
pub fn inner_product(a: &FunctionSample, b: &FunctionSample) -> Result<f64> {
    a.check_compatible(b)?;
    let sum: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok(sum / a.values.len() as f64 * a.grid.volume())
}

pub fn norm_sq(a: &FunctionSample) -> f64 {
    let sum: f64 = a.values.iter().map(|x| x * x).sum();
    sum / a.values.len() as f64 * a.grid.volume()
}

/// Relative L2 error `||a - b|| / ||b||`.
pub fn relative_l2(a: &FunctionSample, b: &FunctionSample) -> Result<f64> {
    let diff = a.sub(b)?;
    let denom = norm_sq(b).sqrt();
    if denom == 0.0 {
        return Ok(norm_sq(&diff).sqrt());
    }
    Ok(norm_sq(&diff).sqrt() / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn grid_coords_include_endpoints() {
        let g = Grid::line(5).unwrap();
        assert_eq!(g.axis_coords(0), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g2 = Grid::plane(2, 3).unwrap();
        let c = g2.coords();
        assert_eq!(c.len(), 6);
        assert_eq!(c[0], vec![0.0, 0.0]);
        assert_eq!(c[1], vec![0.0, 0.5]);
        assert_eq!(c[5], vec![1.0, 1.0]);
        // lexicographic order
        for w in c.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(Grid::new(&[]).is_err());
        assert!(Grid::new(&[4, 4, 4]).is_err());
        assert!(Grid::new(&[1]).is_err());
    }

    #[test]
    fn sample_rejects_non_finite_and_bad_length() {
        let g = Grid::line(4).unwrap();
        assert!(FunctionSample::new(g.clone(), 1, vec![0.0; 3]).is_err());
        assert!(FunctionSample::new(g, 1, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn unit_constant_has_unit_norm() {
        for g in [Grid::line(7).unwrap(), Grid::plane(4, 5).unwrap()] {
            let one = FunctionSample::constant(&g, 1, 1.0);
            assert_eq!(inner_product(&one, &one).unwrap(), 1.0);
            let c = FunctionSample::constant(&g, 1, 3.0);
            assert!((norm_sq(&c) - 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gives_zero() {
        let g = Grid::line(16).unwrap();
        let f = FunctionSample::from_fn(&g, |x| x[0].powi(2));
        let z = FunctionSample::zeros(&g, 1);
        assert_eq!(inner_product(&f, &z).unwrap(), 0.0);
        assert_eq!(norm_sq(&z), 0.0);
    }

    #[test]
    fn sine_squared_integrates_to_half() {
        let g = Grid::line(256).unwrap();
        let s = FunctionSample::from_fn(&g, |x| (2.0 * PI * x[0]).sin());
        let ip = inner_product(&s, &s).unwrap();
        // both endpoints are grid points: the sample mean of sin^2 is (n-1)/(2n)
        assert!((ip - 0.5 * 255.0 / 256.0).abs() < 1e-12, "{ip}");
    }

    #[test]
    fn grid_mismatch_is_shape_error() {
        let a = FunctionSample::zeros(&Grid::line(4).unwrap(), 1);
        let b = FunctionSample::zeros(&Grid::line(5).unwrap(), 1);
        assert!(matches!(inner_product(&a, &b), Err(FmfError::Shape(_))));
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, f64, f64)> {
        (
            prop::collection::vec(-10.0..10.0f64, 12),
            prop::collection::vec(-10.0..10.0f64, 12),
            prop::collection::vec(-10.0..10.0f64, 12),
            -5.0..5.0f64,
            -5.0..5.0f64,
        )
    }

    proptest! {
        #[test]
        fn inner_product_is_symmetric_and_bilinear((a, b, c, s, t) in arb_pair()) {
            let g = Grid::plane(3, 4).unwrap();
            let fa = FunctionSample::new(g.clone(), 1, a).unwrap();
            let fb = FunctionSample::new(g.clone(), 1, b).unwrap();
            let fc = FunctionSample::new(g, 1, c).unwrap();
            let ab = inner_product(&fa, &fb).unwrap();
            let ba = inner_product(&fb, &fa).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab.abs()));
            let lhs = inner_product(&fa.lin_comb(s, &fb, t).unwrap(), &fc).unwrap();
            let rhs = s * inner_product(&fa, &fc).unwrap() + t * inner_product(&fb, &fc).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs() + rhs.abs()));
            prop_assert_eq!(norm_sq(&fa), inner_product(&fa, &fa).unwrap());
        }
    }
}
