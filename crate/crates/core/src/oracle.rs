//! Exact reference fields for finite-atom datasets.
//!
//! For data `nu = sum_k w_k delta_{f_k}` and the straight conditional path,
//! the marginal velocity is the posterior-weighted average of conditional
//! velocities. The posterior weight of atom `k` given state `g` at time `t`
//! is
//!
//! ```text
//! rho_k ∝ w_k exp( <t f_k, g>/s² − t² |f_k|² / (2 s²) ),   s = sigma_t,
//! ```
//!
//! where `<·,·>` is the inner product of the noise's Cameron–Martin space.
//! [`ReferenceMetric`] selects that inner product: the plain quadrature inner
//! product (identity-covariance surrogate) or exact whitening by a dense
//! Matérn covariance, which makes the oracle the true marginal field of
//! training runs using that noise.

use std::sync::Arc;

use crate::cond_path::{cond_flow, cond_velocity, PathParams};
use crate::datasets::AtomDataset;
use crate::error::{FmfError, Result};
use crate::function_space::{norm_sq, FunctionSample, Grid, MaternCovariance, NoiseSampler, NoiseSpec};
use crate::operator::Field;

/// Default number of RK4 steps for mean velocities and flows.
pub const DEFAULT_ODE_STEPS: usize = 256;

/// Inner product used in the posterior exponent.
#[derive(Debug, Clone)]
pub enum ReferenceMetric {
    /// `scale * inner_product(a, b)`. `scale = 1` is the quadrature surrogate;
    /// `scale = points` recovers the Euclidean product, i.e. unit white noise.
    Quadrature { scale: f64 },
    /// `<L^{-1} a, L^{-1} b>` per channel for noise covariance `L L^T`.
    Covariance(Arc<MaternCovariance>),
}

impl Default for ReferenceMetric {
    fn default() -> Self {
        ReferenceMetric::Quadrature { scale: 1.0 }
    }
}

impl ReferenceMetric {
    /// The metric under which the oracle is the exact marginal field for
    /// training noise `spec`: Matérn noise is whitened by its covariance;
    /// other samplers fall back to the white-noise (Euclidean) surrogate.
    pub fn for_noise(grid: &Grid, spec: &NoiseSpec) -> Result<Self> {
        match spec {
            NoiseSpec::Matern { .. } => match NoiseSampler::new(grid, spec)? {
                NoiseSampler::Matern(c) => Ok(ReferenceMetric::Covariance(Arc::new(c))),
                _ => unreachable!("Matérn spec builds a Matérn sampler"),
            },
            _ => Ok(ReferenceMetric::Quadrature {
                scale: grid.len() as f64,
            }),
        }
    }
}

/// Per-atom posterior weights, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights(pub Vec<f64>);

impl MixtureWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Marginal and mean velocity oracle for a fixed dataset, path and metric.
#[derive(Debug, Clone)]
pub struct Oracle {
    data: AtomDataset,
    path: PathParams,
    metric: ReferenceMetric,
    /// Atoms mapped into the metric's coordinates.
    embedded: Vec<Vec<f64>>,
    sq_norms: Vec<f64>,
    ode_steps: usize,
}

impl Oracle {
    pub fn new(data: AtomDataset, path: PathParams, metric: ReferenceMetric) -> Result<Self> {
        path.validate()?;
        if let ReferenceMetric::Covariance(c) = &metric {
            if c.grid() != data.grid() {
                return Err(FmfError::shape("metric covariance grid does not match the dataset"));
            }
        }
        if let ReferenceMetric::Quadrature { scale } = metric {
            if !(scale.is_finite() && scale > 0.0) {
                return Err(FmfError::param("metric scale must be positive"));
            }
        }
        let mut oracle = Self {
            data,
            path,
            metric,
            embedded: Vec::new(),
            sq_norms: Vec::new(),
            ode_steps: DEFAULT_ODE_STEPS,
        };
        oracle.embedded = oracle.data.atoms().iter().map(|a| oracle.embed(a)).collect();
        oracle.sq_norms = oracle.embedded.iter().map(|e| oracle.dot(e, e)).collect();
        Ok(oracle)
    }

    /// Quadrature-metric oracle.
    pub fn quadrature(data: AtomDataset, path: PathParams) -> Result<Self> {
        Self::new(data, path, ReferenceMetric::default())
    }

    pub fn with_ode_steps(mut self, steps: usize) -> Result<Self> {
        if steps < 4 {
            return Err(FmfError::param("ode_steps must be >= 4"));
        }
        self.ode_steps = steps;
        Ok(self)
    }

    pub fn dataset(&self) -> &AtomDataset {
        &self.data
    }

    pub fn path(&self) -> PathParams {
        self.path
    }

    pub fn ode_steps(&self) -> usize {
        self.ode_steps
    }

    fn embed(&self, f: &FunctionSample) -> Vec<f64> {
        match &self.metric {
            ReferenceMetric::Quadrature { .. } => f.values().to_vec(),
            ReferenceMetric::Covariance(c) => (0..f.channels())
                .flat_map(|ch| c.whiten(f.channel(ch)))
                .collect(),
        }
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        let s: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        match &self.metric {
            ReferenceMetric::Quadrature { scale } => scale * s / a.len() as f64,
            ReferenceMetric::Covariance(_) => s,
        }
    }

    fn check_state(&self, g: &FunctionSample) -> Result<()> {
        g.check_compatible(&self.data.atoms()[0])
    }

    /// Posterior weights over atoms given state `g` at time `t`.
    pub fn mixture_weights(&self, g: &FunctionSample, t: f64) -> Result<MixtureWeights> {
        self.check_state(g)?;
        if !(0.0..=1.0).contains(&t) {
            return Err(FmfError::param(format!("time must lie in [0, 1], got {t}")));
        }
        let s = self.path.sigma_t(t);
        if s <= 0.0 {
            return Err(FmfError::SingularTime(
                "posterior weights are undefined at t = 1 with sigma_min = 0".into(),
            ));
        }
        let eg = self.embed(g);
        let s2 = s * s;
        let logits: Vec<f64> = self
            .data
            .weights()
            .iter()
            .zip(&self.embedded)
            .zip(&self.sq_norms)
            .map(|((&w, e), &nrm)| {
                if w == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    w.ln() + t * self.dot(e, &eg) / s2 - t * t * nrm / (2.0 * s2)
                }
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(FmfError::numerical("posterior weights cannot be normalized"));
        }
        let mut rho: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = rho.iter().sum();
        if !(z.is_finite() && z > 0.0) {
            return Err(FmfError::numerical("posterior weights cannot be normalized"));
        }
        rho.iter_mut().for_each(|r| *r /= z);
        Ok(MixtureWeights(rho))
    }

    /// True instantaneous velocity `u_t(g)`.
    pub fn marginal_velocity(&self, g: &FunctionSample, t: f64) -> Result<FunctionSample> {
        let rho = self.mixture_weights(g, t)?;
        let mut u = FunctionSample::zeros(g.grid(), g.channels());
        for (f, &w) in self.data.atoms().iter().zip(rho.as_slice()) {
            if w != 0.0 {
                u.axpy(w, &cond_velocity(g, f, t, self.path)?)?;
            }
        }
        Ok(u)
    }

    /// RK4 flow map from `t` to `r` with `steps` steps.
    pub fn flow(&self, g: &FunctionSample, t: f64, r: f64, steps: usize) -> Result<FunctionSample> {
        if steps == 0 {
            return Err(FmfError::param("ode steps must be >= 1"));
        }
        let h = (r - t) / steps as f64;
        let mut x = g.clone();
        for i in 0..steps {
            let s = t + i as f64 * h;
            let k1 = self.marginal_velocity(&x, s)?;
            let k2 = self.marginal_velocity(&x.lin_comb(1.0, &k1, 0.5 * h)?, s + 0.5 * h)?;
            let k3 = self.marginal_velocity(&x.lin_comb(1.0, &k2, 0.5 * h)?, s + 0.5 * h)?;
            let k4 = self.marginal_velocity(&x.lin_comb(1.0, &k3, h)?, s + h)?;
            x.axpy(h / 6.0, &k1)?;
            x.axpy(h / 3.0, &k2)?;
            x.axpy(h / 3.0, &k3)?;
            x.axpy(h / 6.0, &k4)?;
            if !x.is_finite() {
                return Err(FmfError::numerical(format!("flow diverged at time {s}")));
            }
        }
        Ok(x)
    }

    /// Mean velocity `(phi_{t->r}(g) - g) / (r - t)` using the oracle's ODE
    /// step count.
    pub fn mean_velocity(&self, g: &FunctionSample, t: f64, r: f64) -> Result<FunctionSample> {
        self.mean_velocity_with(g, t, r, self.ode_steps)
    }

    pub fn mean_velocity_with(
        &self,
        g: &FunctionSample,
        t: f64,
        r: f64,
        ode_steps: usize,
    ) -> Result<FunctionSample> {
        if t.is_nan() || r.is_nan() || t >= r {
            return Err(FmfError::param(format!("mean velocity needs t < r, got ({t}, {r})")));
        }
        if ode_steps < 4 {
            return Err(FmfError::param("ode_steps must be >= 4"));
        }
        let end = self.flow(g, t, r, ode_steps)?;
        end.lin_comb(1.0 / (r - t), g, -1.0 / (r - t))
    }

    /// Distance between the posterior-averaged conditional flows and the
    /// true flow from `t` to `r`.
    pub fn flow_mismatch(&self, g: &FunctionSample, t: f64, r: f64) -> Result<f64> {
        if t == r {
            return Ok(0.0);
        }
        let rho = self.mixture_weights(g, t)?;
        let mut averaged = FunctionSample::zeros(g.grid(), g.channels());
        for (f, &w) in self.data.atoms().iter().zip(rho.as_slice()) {
            averaged.axpy(w, &cond_flow(g, f, t, r, self.path)?)?;
        }
        let exact = self.flow(g, t, r, self.ode_steps)?;
        Ok(norm_sq(&averaged.sub(&exact)?).sqrt())
    }

    /// The instantaneous field as a [`Field`] (ignores `r`).
    pub fn marginal_field(&self) -> MarginalField<'_> {
        MarginalField(self)
    }

    /// The mean velocity as a [`Field`]; falls back to the instantaneous
    /// field at `t = r`.
    pub fn mean_field(&self) -> MeanField<'_> {
        MeanField(self)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MarginalField<'a>(&'a Oracle);

impl Field for MarginalField<'_> {
    fn eval(&self, g: &FunctionSample, t: f64, _r: f64) -> Result<FunctionSample> {
        self.0.marginal_velocity(g, t)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MeanField<'a>(&'a Oracle);

impl Field for MeanField<'_> {
    fn eval(&self, g: &FunctionSample, t: f64, r: f64) -> Result<FunctionSample> {
        if r == t {
            self.0.marginal_velocity(g, t)
        } else {
            self.0.mean_velocity(g, t, r)
        }
    }
}

/// Quadrature-metric posterior weights.
pub fn mixture_weights(
    g: &FunctionSample,
    t: f64,
    data: &AtomDataset,
    p: PathParams,
) -> Result<MixtureWeights> {
    Oracle::quadrature(data.clone(), p)?.mixture_weights(g, t)
}

/// Quadrature-metric marginal velocity.
pub fn marginal_velocity(
    g: &FunctionSample,
    t: f64,
    data: &AtomDataset,
    p: PathParams,
) -> Result<FunctionSample> {
    Oracle::quadrature(data.clone(), p)?.marginal_velocity(g, t)
}

/// Quadrature-metric mean velocity with `ode_steps` RK4 steps.
pub fn mean_velocity(
    g: &FunctionSample,
    t: f64,
    r: f64,
    data: &AtomDataset,
    p: PathParams,
    ode_steps: usize,
) -> Result<FunctionSample> {
    Oracle::quadrature(data.clone(), p)?.mean_velocity_with(g, t, r, ode_steps)
}

/// Quadrature-metric flow mismatch with `ode_steps` RK4 steps.
pub fn flow_mismatch(
    g: &FunctionSample,
    t: f64,
    r: f64,
    data: &AtomDataset,
    p: PathParams,
    ode_steps: usize,
) -> Result<f64> {
    Oracle::quadrature(data.clone(), p)?
        .with_ode_steps(ode_steps)?
        .flow_mismatch(g, t, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_space::{relative_l2, Grid, NoiseSampler, NoiseSpec};
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn random(grid: &Grid, rng: &mut impl Rng, amp: f64) -> FunctionSample {
        let v = (0..grid.len()).map(|_| rng.random_range(-amp..amp)).collect();
        FunctionSample::new(grid.clone(), 1, v).unwrap()
    }

    fn two_atoms(grid: &Grid) -> AtomDataset {
        let f = FunctionSample::from_fn(grid, |x| (2.0 * std::f64::consts::PI * x[0]).sin());
        AtomDataset::uniform(vec![f.clone(), f.scale(-1.0)]).unwrap()
    }

    #[test]
    fn weights_basic_cases() {
        let g = Grid::line(16).unwrap();
        let mut rng = rng_from_seed(1);
        let p = PathParams::new(0.01).unwrap();
        let a = random(&g, &mut rng, 1.0);
        let b = random(&g, &mut rng, 1.0);
        let d = AtomDataset::new(vec![a.clone(), b], vec![0.3, 0.7]).unwrap();
        let o = Oracle::quadrature(d, p).unwrap();
        let x = random(&g, &mut rng, 1.0);
        assert_eq!(o.mixture_weights(&x, 0.0).unwrap().0, vec![0.3, 0.7]);
        let rho = o.mixture_weights(&x, 0.6).unwrap();
        assert!((rho.0.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let single = Oracle::quadrature(AtomDataset::uniform(vec![a]).unwrap(), p).unwrap();
        assert_eq!(single.mixture_weights(&x, 0.7).unwrap().0, vec![1.0]);

        let sym = Oracle::quadrature(two_atoms(&g), p).unwrap();
        let zero = FunctionSample::zeros(&g, 1);
        assert_eq!(sym.mixture_weights(&zero, 0.5).unwrap().0, vec![0.5, 0.5]);
    }

    #[test]
    fn weights_are_stable_at_small_sigma() {
        let g = Grid::line(16).unwrap();
        let p = PathParams::new(1e-6).unwrap();
        let o = Oracle::new(two_atoms(&g), p, ReferenceMetric::Quadrature { scale: 16.0 }).unwrap();
        let x = o.dataset().atoms()[0].clone();
        let rho = o.mixture_weights(&x, 1.0).unwrap();
        assert!(rho.0.iter().all(|w| w.is_finite()));
        assert!((rho.0[0] - 1.0).abs() < 1e-12);
        let path0 = PathParams::new(0.0).unwrap();
        let o0 = Oracle::quadrature(two_atoms(&g), path0).unwrap();
        assert!(matches!(o0.mixture_weights(&x, 1.0), Err(FmfError::SingularTime(_))));
    }

    #[test]
    fn weights_match_brute_force_gaussian_posterior() {
        // Under the Euclidean metric the weights are the exact posterior of
        // g = s f0 + t f_k with f0 ~ N(0, I).
        let g = Grid::line(6).unwrap();
        let mut rng = rng_from_seed(3);
        let atoms: Vec<_> = (0..3).map(|_| random(&g, &mut rng, 1.0)).collect();
        let d = AtomDataset::new(atoms.clone(), vec![0.2, 0.5, 0.3]).unwrap();
        let p = PathParams::new(0.05).unwrap();
        let o = Oracle::new(d.clone(), p, ReferenceMetric::Quadrature { scale: 6.0 }).unwrap();
        let x = random(&g, &mut rng, 1.0);
        let t = 0.4;
        let s = p.sigma_t(t);
        let dens: Vec<f64> = atoms
            .iter()
            .zip(d.weights())
            .map(|(f, w)| {
                let r2: f64 = x
                    .values()
                    .iter()
                    .zip(f.values())
                    .map(|(a, b)| (a - t * b).powi(2))
                    .sum();
                w * (-r2 / (2.0 * s * s)).exp()
            })
            .collect();
        let z: f64 = dens.iter().sum();
        let rho = o.mixture_weights(&x, t).unwrap();
        for (a, b) in rho.0.iter().zip(&dens) {
            assert!((a - b / z).abs() < 1e-12);
        }
    }

    #[test]
    fn covariance_metric_matches_correlated_posterior() {
        let g = Grid::line(8).unwrap();
        let spec = NoiseSpec::matern(0.3, 1.0);
        let cov = match NoiseSampler::new(&g, &spec).unwrap() {
            NoiseSampler::Matern(c) => c,
            _ => unreachable!(),
        };
        let mut rng = rng_from_seed(4);
        let atoms: Vec<_> = (0..2).map(|_| random(&g, &mut rng, 1.0)).collect();
        let d = AtomDataset::uniform(atoms.clone()).unwrap();
        let p = PathParams::new(0.1).unwrap();
        let o = Oracle::new(d, p, ReferenceMetric::Covariance(Arc::new(cov.clone()))).unwrap();
        let x = random(&g, &mut rng, 1.0);
        let t = 0.5;
        let s = p.sigma_t(t);
        let logd: Vec<f64> = atoms
            .iter()
            .map(|f| {
                let res: Vec<f64> = x
                    .values()
                    .iter()
                    .zip(f.values())
                    .map(|(a, b)| a - t * b)
                    .collect();
                let w = cov.whiten(&res);
                -w.iter().map(|v| v * v).sum::<f64>() / (2.0 * s * s)
            })
            .collect();
        let expect0 = 1.0 / (1.0 + (logd[1] - logd[0]).exp());
        let rho = o.mixture_weights(&x, t).unwrap();
        assert!((rho.0[0] - expect0).abs() < 1e-10);
    }

    #[test]
    fn marginal_velocity_cases() {
        let g = Grid::line(16).unwrap();
        let mut rng = rng_from_seed(5);
        let p = PathParams::new(0.02).unwrap();
        let f = random(&g, &mut rng, 1.0);
        let x = random(&g, &mut rng, 1.0);
        let single = Oracle::quadrature(AtomDataset::uniform(vec![f.clone()]).unwrap(), p).unwrap();
        assert_eq!(
            single.marginal_velocity(&x, 0.3).unwrap(),
            cond_velocity(&x, &f, 0.3, p).unwrap()
        );
        let h = random(&g, &mut rng, 1.0);
        let d = AtomDataset::new(vec![f, h], vec![0.4, 0.6]).unwrap();
        let o = Oracle::quadrature(d.clone(), p).unwrap();
        let expect = d.mean().lin_comb(1.0, &x, -(1.0 - p.sigma_min)).unwrap();
        assert!(o.marginal_velocity(&x, 0.0).unwrap().max_abs_diff(&expect).unwrap() < 1e-12);

        let sym = Oracle::quadrature(two_atoms(&g), p).unwrap();
        let zero = FunctionSample::zeros(&g, 1);
        assert!(sym.marginal_velocity(&zero, 0.0).unwrap().values().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn mean_velocity_single_atom_matches_conditional_flow() {
        let g = Grid::line(16).unwrap();
        let mut rng = rng_from_seed(6);
        let p = PathParams::new(0.01).unwrap();
        let f = random(&g, &mut rng, 1.0);
        let o = Oracle::quadrature(AtomDataset::uniform(vec![f.clone()]).unwrap(), p).unwrap();
        let x = random(&g, &mut rng, 1.0);
        let (t, r) = (0.2, 0.9);
        let mv = o.mean_velocity(&x, t, r).unwrap();
        let expect = cond_flow(&x, &f, t, r, p)
            .unwrap()
            .lin_comb(1.0 / (r - t), &x, -1.0 / (r - t))
            .unwrap();
        assert!(mv.max_abs_diff(&expect).unwrap() < 1e-6);
    }

    #[test]
    fn mean_velocity_limits_and_convergence() {
        let g = Grid::line(16).unwrap();
        let mut rng = rng_from_seed(7);
        let p = PathParams::new(0.01).unwrap();
        let o = Oracle::new(two_atoms(&g), p, ReferenceMetric::Quadrature { scale: 4.0 }).unwrap();
        let x = random(&g, &mut rng, 1.0);
        let t = 0.3;
        let near = o.mean_velocity(&x, t, t + 1e-6).unwrap();
        let inst = o.marginal_velocity(&x, t).unwrap();
        assert!(relative_l2(&near, &inst).unwrap() < 1e-4);

        let a = o.mean_velocity_with(&x, 0.1, 0.8, 256).unwrap();
        let b = o.mean_velocity_with(&x, 0.1, 0.8, 512).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-8);

        assert!(o.mean_velocity(&x, 0.5, 0.5).is_err());
        assert!(o.mean_velocity_with(&x, 0.1, 0.5, 2).is_err());
    }

    #[test]
    fn mismatch_vanishes_for_one_atom_and_not_for_two() {
        let g = Grid::line(16).unwrap();
        let mut rng = rng_from_seed(8);
        let p = PathParams::new(1e-4).unwrap();
        let x = random(&g, &mut rng, 1.0);
        let two = Oracle::quadrature(two_atoms(&g), p).unwrap();
        let m2 = two.flow_mismatch(&x, 0.0, 0.8).unwrap();
        assert!(m2 > 1e-3, "{m2}");
        assert_eq!(two.flow_mismatch(&x, 0.4, 0.4).unwrap(), 0.0);
        let one = Oracle::quadrature(
            AtomDataset::uniform(vec![two.dataset().atoms()[0].clone()]).unwrap(),
            p,
        )
        .unwrap();
        assert!(one.flow_mismatch(&x, 0.0, 0.8).unwrap() < 1e-10);
    }
}
