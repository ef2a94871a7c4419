//! Browser demo bindings: noise draws, the averaged-flow mismatch on a
//! two-atom dataset, and one-step vs Euler transport on its exact field.
//!
//! All curves are returned as flat `Float64Array`s on a 1D grid; multiple
//! curves are concatenated, `n` values each.

use fmf::cond_path::{cond_flow, interpolant, PathParams};
use fmf::datasets::{gp_mixture, AtomDataset};
use fmf::function_space::NoiseSampler;
use fmf::oracle::Oracle;
use fmf::sampler::{euler_baseline, one_step_u};
use fmf::{FunctionSample, Grid, NoiseSpec};
use wasm_bindgen::prelude::*;

fn js(e: fmf::FmfError) -> JsError {
    JsError::new(&e.to_string())
}

fn noise_spec(kind: &str, param: f64, n: usize) -> fmf::Result<NoiseSpec> {
    let spec = match kind {
        "matern" => NoiseSpec::matern(param, 1.0),
        "mollified_white" => NoiseSpec::MollifiedWhite { mollify_l: param },
        "grid_interp" => NoiseSpec::GridInterp {
            coarse_resolution: vec![(param as usize).clamp(2, n)],
        },
        other => {
            return Err(fmf::FmfError::InvalidParam(format!("unknown noise kind `{other}`")));
        }
    };
    spec.validate()?;
    Ok(spec)
}

/// `count` noise functions on an `n`-point grid.
pub fn noise_curves(kind: &str, param: f64, n: usize, count: usize, seed: u32) -> fmf::Result<Vec<f64>> {
    let grid = Grid::line(n)?;
    let sampler = NoiseSampler::new(&grid, &noise_spec(kind, param, n)?)?;
    Ok((0..count)
        .flat_map(|i| sampler.sample(seed as u64 * 7919 + i as u64, 1).into_values())
        .collect())
}

#[wasm_bindgen]
pub fn sample_noise(kind: &str, param: f64, n: usize, count: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    noise_curves(kind, param, n, count, seed).map_err(js)
}

/// A two-atom Gaussian-process dataset with its exact transport field.
#[wasm_bindgen]
pub struct TwoAtomDemo {
    grid: Grid,
    noise: NoiseSampler,
    oracle: Oracle,
}

impl TwoAtomDemo {
    pub fn build(n: usize, data_seed: u32) -> fmf::Result<Self> {
        let grid = Grid::line(n)?;
        let data = gp_mixture(&grid, 2, 0.2, 1.0, 1.5, data_seed as u64)?;
        let noise = NoiseSampler::new(&grid, &NoiseSpec::matern(0.1, 1.0))?;
        let oracle = Oracle::quadrature(data, PathParams::new(1e-3)?)?.with_ode_steps(128)?;
        Ok(Self { grid, noise, oracle })
    }

    fn start(&self, seed: u32) -> FunctionSample {
        self.noise.sample(seed as u64, 1)
    }

    fn data(&self) -> &AtomDataset {
        self.oracle.dataset()
    }

    /// Exact flow, posterior-averaged conditional flow and their distance
    /// for a state on the path towards the first atom.
    pub fn flows(&self, seed: u32, t: f64, r: f64) -> fmf::Result<(Vec<f64>, Vec<f64>, f64)> {
        let path = self.oracle.path();
        let g = interpolant(&self.start(seed), &self.data().atoms()[0], t, path)?;
        let rho = self.oracle.mixture_weights(&g, t)?;
        let mut averaged = FunctionSample::zeros(&self.grid, 1);
        for (f, &w) in self.data().atoms().iter().zip(rho.as_slice()) {
            averaged.axpy(w, &cond_flow(&g, f, t, r, path)?)?;
        }
        let exact = self.oracle.flow(&g, t, r, self.oracle.ode_steps())?;
        let gap = self.oracle.flow_mismatch(&g, t, r)?;
        Ok((exact.into_values(), averaged.into_values(), gap))
    }

    /// One mean-velocity jump, `steps`-step Euler, and the RK4 flow the jump
    /// is built from.
    pub fn transports(&self, seed: u32, steps: usize) -> fmf::Result<[Vec<f64>; 3]> {
        let f0 = self.start(seed);
        let mean = self.oracle.mean_field();
        Ok([
            one_step_u(&mean, &f0)?.into_values(),
            euler_baseline(&self.oracle.marginal_field(), &f0, steps)?.into_values(),
            self.oracle.flow(&f0, 0.0, 1.0, self.oracle.ode_steps())?.into_values(),
        ])
    }
}

#[wasm_bindgen]
impl TwoAtomDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, data_seed: u32) -> Result<TwoAtomDemo, JsError> {
        Self::build(n, data_seed).map_err(js)
    }

    pub fn points(&self) -> Vec<f64> {
        self.grid.axis_coords(0)
    }

    /// Both atoms, concatenated.
    pub fn atoms(&self) -> Vec<f64> {
        self.data().atoms().iter().flat_map(|a| a.values().to_vec()).collect()
    }

    pub fn noise(&self, seed: u32) -> Vec<f64> {
        self.start(seed).into_values()
    }

    /// `[exact flow, averaged conditional flow, mismatch]` flattened; the
    /// mismatch is the final element.
    pub fn mismatch(&self, seed: u32, t: f64, r: f64) -> Result<Vec<f64>, JsError> {
        let (mut exact, averaged, gap) = self.flows(seed, t, r).map_err(js)?;
        exact.extend(averaged);
        exact.push(gap);
        Ok(exact)
    }

    /// `[one-step, euler, reference]` flattened.
    pub fn compare(&self, seed: u32, steps: usize) -> Result<Vec<f64>, JsError> {
        Ok(self.transports(seed, steps).map_err(js)?.concat())
    }
}
