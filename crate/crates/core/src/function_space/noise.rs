//! Samplers for the reference Gaussian measure `N(0, C_0)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::matern::MaternCovariance;
use super::spectral::mollify;
use super::{FunctionSample, Grid};
use crate::error::{FmfError, Result};
use crate::rng::rng_from_seed;

/// Largest grid accepted for a dense Matérn covariance.
pub const DEFAULT_DENSE_CAP: usize = 4096;

/// Declarative description of the initial noise measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// Zero-mean Gaussian process with a Matérn kernel.
    Matern {
        matern_length: f64,
        matern_variance: f64,
        #[serde(default = "default_nu")]
        matern_nu: f64,
    },
    /// White noise smoothed by the heat kernel `K(y, l)`; `l` is measured in
    /// pixels, so `l = 1` smooths by one grid cell.
    MollifiedWhite { mollify_l: f64 },
    /// Standard normal values on a coarse lattice, multilinearly
    /// interpolated onto the grid.
    GridInterp { coarse_resolution: Vec<usize> },
}

fn default_nu() -> f64 {
    1.5
}

impl NoiseSpec {
    pub fn matern(length: f64, variance: f64) -> Self {
        NoiseSpec::Matern {
            matern_length: length,
            matern_variance: variance,
            matern_nu: default_nu(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(FmfError::param(format!("{name} must be positive, got {v}")))
            }
        };
        match self {
            NoiseSpec::Matern {
                matern_length,
                matern_variance,
                matern_nu,
            } => {
                positive("matern_length", *matern_length)?;
                positive("matern_variance", *matern_variance)?;
                positive("matern_nu", *matern_nu)
            }
            NoiseSpec::MollifiedWhite { mollify_l } => positive("mollify_l", *mollify_l),
            NoiseSpec::GridInterp { coarse_resolution } => {
                if coarse_resolution.iter().any(|&n| n < 2) || coarse_resolution.is_empty() {
                    return Err(FmfError::param(
                        "coarse_resolution needs at least 2 points per axis",
                    ));
                }
                Ok(())
            }
        }
    }
}

/// A noise sampler prepared for one grid; holds the Cholesky factor for the
/// Matérn case so repeated draws are cheap.
#[derive(Debug, Clone)]
pub enum NoiseSampler {
    Matern(MaternCovariance),
    MollifiedWhite { grid: Grid, l: f64 },
    GridInterp { grid: Grid, coarse: Grid },
}

impl NoiseSampler {
    pub fn new(grid: &Grid, spec: &NoiseSpec) -> Result<Self> {
        Self::with_cap(grid, spec, DEFAULT_DENSE_CAP)
    }

    pub fn with_cap(grid: &Grid, spec: &NoiseSpec, cap: usize) -> Result<Self> {
        spec.validate()?;
        match spec {
            NoiseSpec::Matern {
                matern_length,
                matern_variance,
                matern_nu,
            } => Ok(NoiseSampler::Matern(MaternCovariance::new(
                grid,
                *matern_nu,
                *matern_length,
                *matern_variance,
                cap,
            )?)),
            NoiseSpec::MollifiedWhite { mollify_l } => Ok(NoiseSampler::MollifiedWhite {
                grid: grid.clone(),
                l: *mollify_l,
            }),
            NoiseSpec::GridInterp { coarse_resolution } => {
                if coarse_resolution.len() != grid.dim() {
                    return Err(FmfError::param(format!(
                        "coarse resolution has {} axes, grid has {}",
                        coarse_resolution.len(),
                        grid.dim()
                    )));
                }
                if coarse_resolution
                    .iter()
                    .zip(grid.resolution())
                    .any(|(c, f)| c > f)
                {
                    return Err(FmfError::param(
                        "coarse resolution must not exceed the grid resolution",
                    ));
                }
                Ok(NoiseSampler::GridInterp {
                    grid: grid.clone(),
                    coarse: Grid::new(coarse_resolution)?,
                })
            }
        }
    }

    pub fn grid(&self) -> &Grid {
        match self {
            NoiseSampler::Matern(cov) => cov.grid(),
            NoiseSampler::MollifiedWhite { grid, .. } | NoiseSampler::GridInterp { grid, .. } => {
                grid
            }
        }
    }

    /// Draws one function with `channels` independent channels.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, channels: usize) -> FunctionSample {
        let n = self.grid().len();
        let mut values = Vec::with_capacity(n * channels);
        for _ in 0..channels {
            match self {
                NoiseSampler::Matern(cov) => {
                    let z = standard_normals(rng, n);
                    values.extend(cov.correlate(&z));
                }
                NoiseSampler::MollifiedWhite { grid, l } => {
                    let z = FunctionSample::from_parts_unchecked(
                        grid.clone(),
                        1,
                        standard_normals(rng, n),
                    );
                    values.extend(mollify(&z, *l).into_values());
                }
                NoiseSampler::GridInterp { grid, coarse } => {
                    let nodes = standard_normals(rng, coarse.len());
                    values.extend(interpolate_multilinear(coarse, &nodes, grid));
                }
            }
        }
        FunctionSample::from_parts_unchecked(self.grid().clone(), channels, values)
    }

    pub fn sample(&self, seed: u64, channels: usize) -> FunctionSample {
        self.sample_with(&mut rng_from_seed(seed), channels)
    }
}

fn standard_normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Multilinear interpolation from node values on `coarse` to the points of
/// `fine`; both lattices span `[0,1]^d` including endpoints.
pub(crate) fn interpolate_multilinear(coarse: &Grid, nodes: &[f64], fine: &Grid) -> Vec<f64> {
    let (c0, c1) = coarse.shape2();
    let coords: Vec<Vec<f64>> = fine.coords();
    let locate = |x: f64, n: usize| -> (usize, f64) {
        let s = x * (n - 1) as f64;
        let i = (s.floor() as usize).min(n - 2);
        (i, s - i as f64)
    };
    coords
        .iter()
        .map(|x| {
            let (i0, w0) = if coarse.dim() == 2 {
                locate(x[0], c0)
            } else {
                (0, 0.0)
            };
            let (i1, w1) = locate(*x.last().unwrap(), c1);
            let at = |a: usize, b: usize| nodes[a * c1 + b];
            if coarse.dim() == 1 {
                (1.0 - w1) * at(0, i1) + w1 * at(0, i1 + 1)
            } else {
                (1.0 - w0) * ((1.0 - w1) * at(i0, i1) + w1 * at(i0, i1 + 1))
                    + w0 * ((1.0 - w1) * at(i0 + 1, i1) + w1 * at(i0 + 1, i1 + 1))
            }
        })
        .collect()
}

fn require_kind(spec: &NoiseSpec, want: &str) -> Result<()> {
    let ok = matches!(
        (spec, want),
        (NoiseSpec::Matern { .. }, "matern")
            | (NoiseSpec::MollifiedWhite { .. }, "mollified_white")
            | (NoiseSpec::GridInterp { .. }, "grid_interp")
    );
    if ok {
        Ok(())
    } else {
        Err(FmfError::param(format!("noise spec is not of kind {want}")))
    }
}

/// One zero-mean Matérn GP draw via dense Cholesky.
pub fn sample_matern(grid: &Grid, spec: &NoiseSpec, seed: u64) -> Result<FunctionSample> {
    require_kind(spec, "matern")?;
    Ok(NoiseSampler::new(grid, spec)?.sample(seed, 1))
}

/// White noise convolved with the periodic heat kernel.
pub fn sample_mollified_white(grid: &Grid, spec: &NoiseSpec, seed: u64) -> Result<FunctionSample> {
    require_kind(spec, "mollified_white")?;
    Ok(NoiseSampler::new(grid, spec)?.sample(seed, 1))
}

/// Coarse white noise, multilinearly interpolated onto the grid.
pub fn sample_grid_interp(grid: &Grid, spec: &NoiseSpec, seed: u64) -> Result<FunctionSample> {
    require_kind(spec, "grid_interp")?;
    Ok(NoiseSampler::new(grid, spec)?.sample(seed, 1))
}
