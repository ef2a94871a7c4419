//! Finite weighted function datasets and the builtin synthetic generators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FmfError, Result};
use crate::function_space::{FunctionSample, Grid, NoiseSampler, NoiseSpec};
use crate::rng::{derive_seed, rng_from_seed};

/// A finite weighted set of target functions sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomDataset {
    atoms: Vec<FunctionSample>,
    weights: Vec<f64>,
}

impl AtomDataset {
    /// Weights must be nonnegative with a positive sum; they are normalized.
    pub fn new(atoms: Vec<FunctionSample>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(FmfError::param("dataset needs at least one atom"));
        }
        if atoms.len() != weights.len() {
            return Err(FmfError::shape(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        for a in &atoms[1..] {
            a.check_compatible(&atoms[0])?;
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(FmfError::param("dataset weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(FmfError::param("dataset weights must not all be zero"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { atoms, weights })
    }

    pub fn uniform(atoms: Vec<FunctionSample>) -> Result<Self> {
        let w = vec![1.0; atoms.len()];
        Self::new(atoms, w)
    }

    pub fn atoms(&self) -> &[FunctionSample] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn grid(&self) -> &Grid {
        self.atoms[0].grid()
    }

    pub fn channels(&self) -> usize {
        self.atoms[0].channels()
    }

    /// Draws an atom index according to the weights.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        // roundoff: fall back to the last atom with positive weight
        self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }

    /// Weighted mean function `sum_k w_k f_k`.
    pub fn mean(&self) -> FunctionSample {
        let mut m = FunctionSample::zeros(self.grid(), self.channels());
        for (a, &w) in self.atoms.iter().zip(&self.weights) {
            m.axpy(w, a).expect("atoms share a grid");
        }
        m
    }
}

/// Builtin synthetic dataset generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// `atoms` functions drawn once from a Matérn GP.
    GpMixture {
        atoms: usize,
        #[serde(default = "default_gp_length")]
        length: f64,
        #[serde(default = "default_gp_variance")]
        variance: f64,
        #[serde(default = "default_gp_nu")]
        nu: f64,
    },
    /// `a sin(2 pi (k x + phase))` with random amplitude, phase and frequency.
    Sinusoids {
        atoms: usize,
        #[serde(default = "default_max_frequency")]
        max_frequency: usize,
    },
    /// Signed distance fields of random circles on a 2D grid.
    CircleSdf { atoms: usize },
    /// Atoms read from a sample container.
    File { path: String },
}

fn default_gp_length() -> f64 {
    0.2
}

fn default_gp_variance() -> f64 {
    1.0
}

fn default_gp_nu() -> f64 {
    1.5
}

fn default_max_frequency() -> usize {
    3
}

impl DatasetSpec {
    /// Builds the dataset on `grid`; atoms are a pure function of `seed`.
    pub fn build(&self, grid: &Grid, seed: u64) -> Result<AtomDataset> {
        match self {
            DatasetSpec::GpMixture {
                atoms,
                length,
                variance,
                nu,
            } => gp_mixture(grid, *atoms, *length, *variance, *nu, seed),
            DatasetSpec::Sinusoids {
                atoms,
                max_frequency,
            } => sinusoids(grid, *atoms, *max_frequency, seed),
            DatasetSpec::CircleSdf { atoms } => circle_sdf(grid, *atoms, seed),
            DatasetSpec::File { path } => {
                let set = crate::container::read_samples(std::path::Path::new(path))?;
                if set.grid != *grid {
                    return Err(FmfError::shape(format!(
                        "dataset file grid {:?} does not match configured grid {:?}",
                        set.grid.resolution(),
                        grid.resolution()
                    )));
                }
                match set.weights {
                    Some(w) => AtomDataset::new(set.samples, w),
                    None => AtomDataset::uniform(set.samples),
                }
            }
        }
    }
}

fn check_count(k: usize) -> Result<()> {
    if k == 0 {
        return Err(FmfError::param("generator needs at least one atom"));
    }
    Ok(())
}

pub fn gp_mixture(
    grid: &Grid,
    k: usize,
    length: f64,
    variance: f64,
    nu: f64,
    seed: u64,
) -> Result<AtomDataset> {
    check_count(k)?;
    let spec = NoiseSpec::Matern {
        matern_length: length,
        matern_variance: variance,
        matern_nu: nu,
    };
    let sampler = NoiseSampler::new(grid, &spec)?;
    let atoms = (0..k)
        .map(|i| sampler.sample(derive_seed(seed, 0xda7a, i as u64), 1))
        .collect();
    AtomDataset::uniform(atoms)
}

pub fn sinusoids(grid: &Grid, k: usize, max_frequency: usize, seed: u64) -> Result<AtomDataset> {
    check_count(k)?;
    if grid.dim() != 1 {
        return Err(FmfError::param("the sinusoid family is one-dimensional"));
    }
    if max_frequency == 0 {
        return Err(FmfError::param("max_frequency must be >= 1"));
    }
    let mut rng = rng_from_seed(seed);
    let atoms = (0..k)
        .map(|_| {
            let amp: f64 = rng.random_range(0.5..1.5);
            let phase: f64 = rng.random();
            let freq = rng.random_range(1..=max_frequency) as f64;
            FunctionSample::from_fn(grid, |x| {
                amp * (2.0 * std::f64::consts::PI * (freq * x[0] + phase)).sin()
            })
        })
        .collect();
    AtomDataset::uniform(atoms)
}

pub fn circle_sdf(grid: &Grid, k: usize, seed: u64) -> Result<AtomDataset> {
    check_count(k)?;
    if grid.dim() != 2 {
        return Err(FmfError::param("the circle SDF family is two-dimensional"));
    }
    let mut rng = rng_from_seed(seed);
    let atoms = (0..k)
        .map(|_| {
            let cx: f64 = rng.random_range(0.3..0.7);
            let cy: f64 = rng.random_range(0.3..0.7);
            let rad: f64 = rng.random_range(0.1..0.3);
            FunctionSample::from_fn(grid, |x| {
                ((x[0] - cx).powi(2) + (x[1] - cy).powi(2)).sqrt() - rad
            })
        })
        .collect();
    AtomDataset::uniform(atoms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_normalized() {
        let g = Grid::line(4).unwrap();
        let a = FunctionSample::constant(&g, 1, 1.0);
        let b = FunctionSample::constant(&g, 1, -1.0);
        let d = AtomDataset::new(vec![a, b], vec![3.0, 1.0]).unwrap();
        assert_eq!(d.weights(), &[0.75, 0.25]);
        assert!((d.mean().values()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_datasets_are_rejected() {
        let g = Grid::line(4).unwrap();
        let a = FunctionSample::zeros(&g, 1);
        assert!(AtomDataset::new(vec![], vec![]).is_err());
        assert!(AtomDataset::new(vec![a.clone()], vec![0.0]).is_err());
        assert!(AtomDataset::new(vec![a.clone()], vec![-1.0]).is_err());
        let other = FunctionSample::zeros(&Grid::line(5).unwrap(), 1);
        assert!(AtomDataset::uniform(vec![a, other]).is_err());
    }

    #[test]
    fn index_sampling_follows_weights() {
        let g = Grid::line(4).unwrap();
        let atoms = vec![FunctionSample::zeros(&g, 1); 3];
        let d = AtomDataset::new(atoms, vec![0.2, 0.0, 0.8]).unwrap();
        let mut rng = rng_from_seed(0);
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            counts[d.sample_index(&mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[0] as f64 / 10_000.0 - 0.2).abs() < 0.02);
    }

    #[test]
    fn generators_are_deterministic() {
        let g = Grid::line(16).unwrap();
        let spec = DatasetSpec::GpMixture {
            atoms: 2,
            length: 0.2,
            variance: 1.0,
            nu: 1.5,
        };
        assert_eq!(spec.build(&g, 1).unwrap(), spec.build(&g, 1).unwrap());
        assert_ne!(spec.build(&g, 1).unwrap(), spec.build(&g, 2).unwrap());
        let s = sinusoids(&g, 3, 2, 5).unwrap();
        assert_eq!(s.len(), 3);
        let p = Grid::plane(8, 8).unwrap();
        let c = circle_sdf(&p, 2, 5).unwrap();
        assert!(c.atoms()[0].values().iter().any(|&v| v < 0.0));
        assert!(circle_sdf(&g, 2, 5).is_err());
        assert!(sinusoids(&p, 2, 2, 5).is_err());
    }
}
