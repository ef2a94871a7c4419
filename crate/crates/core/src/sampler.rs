//! Generation from a trained field: one-step (both heads), few-step mean
//! flow, and an Euler baseline on the instantaneous field.
//!
//! Every routine takes any [`Field`], so trained networks and oracle fields
//! are interchangeable.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{FmfError, Result};
use crate::function_space::{wiener_sharpen, FunctionSample, Grid, NoiseSampler, NoiseSpec};
use crate::operator::Field;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    OneStepU,
    OneStepX1,
    FewStepU,
    EulerBaseline,
}

impl SampleMode {
    pub fn is_one_step(self) -> bool {
        matches!(self, SampleMode::OneStepU | SampleMode::OneStepX1)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SampleMode::OneStepU => "one_step_u",
            SampleMode::OneStepX1 => "one_step_x1",
            SampleMode::FewStepU => "few_step_u",
            SampleMode::EulerBaseline => "euler_baseline",
        }
    }
}

impl std::fmt::Display for SampleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SampleMode {
    type Err = FmfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_step_u" => Ok(SampleMode::OneStepU),
            "one_step_x1" => Ok(SampleMode::OneStepX1),
            "few_step_u" => Ok(SampleMode::FewStepU),
            "euler_baseline" => Ok(SampleMode::EulerBaseline),
            other => Err(FmfError::param(format!("unknown sampling mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRequest {
    pub count: usize,
    pub grid: Grid,
    pub noise: NoiseSpec,
    pub mode: SampleMode,
    pub steps: usize,
    pub seed: u64,
    /// Wiener-sharpening `eps`, applied only with mollified white noise.
    pub sharpen_eps: Option<f64>,
}

impl SampleRequest {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if self.steps == 0 {
            return Err(FmfError::param("steps must be >= 1"));
        }
        if self.mode.is_one_step() && self.steps != 1 {
            return Err(FmfError::param("one-step modes take exactly one step"));
        }
        if let Some(eps) = self.sharpen_eps {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(FmfError::param("sharpening eps must be positive"));
            }
        }
        Ok(())
    }
}

/// `f0 + u(f0, 0, 1)`.
pub fn one_step_u(model: &impl Field, f0: &FunctionSample) -> Result<FunctionSample> {
    f0.add(&model.eval(f0, 0.0, 1.0)?)
}

/// `x1(f0, 0, 1)`.
pub fn one_step_x1(model: &impl Field, f0: &FunctionSample) -> Result<FunctionSample> {
    model.eval(f0, 0.0, 1.0)
}

/// Mean-velocity jumps over a uniform partition of `[0, 1]`.
pub fn few_step_u(model: &impl Field, f0: &FunctionSample, steps: usize) -> Result<FunctionSample> {
    if steps == 0 {
        return Err(FmfError::param("steps must be >= 1"));
    }
    let mut x = f0.clone();
    for k in 0..steps {
        let (t, r) = (k as f64 / steps as f64, (k + 1) as f64 / steps as f64);
        let u = model.eval(&x, t, r)?;
        x.axpy(r - t, &u)?;
    }
    Ok(x)
}

/// Explicit Euler on the instantaneous field `u(x, t, t)`.
pub fn euler_baseline(
    model: &impl Field,
    f0: &FunctionSample,
    steps: usize,
) -> Result<FunctionSample> {
    if steps == 0 {
        return Err(FmfError::param("steps must be >= 1"));
    }
    let h = 1.0 / steps as f64;
    let mut x = f0.clone();
    for k in 0..steps {
        let t = k as f64 * h;
        let u = model.eval(&x, t, t)?;
        x.axpy(h, &u)?;
    }
    Ok(x)
}

/// Wraps a field and counts evaluations.
pub struct CountingField<'a, F> {
    inner: &'a F,
    calls: Cell<usize>,
}

impl<'a, F: Field> CountingField<'a, F> {
    pub fn new(inner: &'a F) -> Self {
        Self {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl<F: Field> Field for CountingField<'_, F> {
    fn eval(&self, g: &FunctionSample, t: f64, r: f64) -> Result<FunctionSample> {
        self.calls.set(self.calls.get() + 1);
        self.inner.eval(g, t, r)
    }
}

pub fn sample_one(
    model: &impl Field,
    f0: &FunctionSample,
    mode: SampleMode,
    steps: usize,
) -> Result<FunctionSample> {
    match mode {
        SampleMode::OneStepU => one_step_u(model, f0),
        SampleMode::OneStepX1 => one_step_x1(model, f0),
        SampleMode::FewStepU => few_step_u(model, f0, steps),
        SampleMode::EulerBaseline => euler_baseline(model, f0, steps),
    }
}

/// Generated samples with their evaluation count.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub samples: Vec<FunctionSample>,
    /// Model evaluations per sample.
    pub nfe: usize,
}

/// The initial noise for sample `i` of a request.
pub fn initial_noise(noise: &NoiseSampler, seed: u64, i: usize, channels: usize) -> FunctionSample {
    noise.sample(derive_seed(seed, 0x5a3e, i as u64), channels)
}

pub fn generate(model: &impl Field, req: &SampleRequest, channels: usize) -> Result<Generated> {
    req.validate()?;
    let noise = NoiseSampler::new(&req.grid, &req.noise)?;
    let counter = CountingField::new(model);
    let mut samples = Vec::with_capacity(req.count);
    let mut nfe = if req.mode.is_one_step() { 1 } else { req.steps };
    for i in 0..req.count {
        let before = counter.calls();
        let f0 = initial_noise(&noise, req.seed, i, channels);
        let mut x = sample_one(&counter, &f0, req.mode, req.steps)?;
        nfe = counter.calls() - before;
        if let (Some(eps), NoiseSpec::MollifiedWhite { mollify_l }) = (req.sharpen_eps, &req.noise) {
            x = wiener_sharpen(&x, *mollify_l, eps);
        }
        samples.push(x);
    }
    Ok(Generated { samples, nfe })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cond_path::{cond_velocity, u_to_x1, PathParams};
    use crate::function_space::NoiseSpec;
    use crate::operator::{NeuralOperator, OperatorConfig};

    fn net(grid: &Grid) -> NeuralOperator {
        let cfg = OperatorConfig {
            hidden_channels: 4,
            modes: vec![3],
            layers: 2,
            projection_channels: 4,
            time_scale: 1.0,
            ..OperatorConfig::default()
        };
        NeuralOperator::new(cfg, grid).unwrap()
    }

    struct Constant(FunctionSample);

    impl Field for Constant {
        fn eval(&self, _g: &FunctionSample, _t: f64, _r: f64) -> Result<FunctionSample> {
            Ok(self.0.clone())
        }
    }

    /// A u-field presented as an endpoint field.
    struct Endpoint<'a, F>(&'a F);

    impl<F: Field> Field for Endpoint<'_, F> {
        fn eval(&self, g: &FunctionSample, t: f64, r: f64) -> Result<FunctionSample> {
            u_to_x1(&self.0.eval(g, t, r)?, g, t)
        }
    }

    #[test]
    fn zero_model_returns_noise() {
        let g = Grid::line(16).unwrap();
        let n = net(&g);
        let p = n.zero_params();
        let m = n.bind(&p);
        let f0 = FunctionSample::from_fn(&g, |x| x[0] * x[0]);
        assert_eq!(one_step_u(&m, &f0).unwrap(), f0);
        assert_eq!(few_step_u(&m, &f0, 5).unwrap(), f0);
        assert_eq!(euler_baseline(&m, &f0, 5).unwrap(), f0);
    }

    #[test]
    fn one_step_relations() {
        let g = Grid::line(16).unwrap();
        let n = net(&g);
        let p = n.init_params(3);
        let m = n.bind(&p);
        let f0 = FunctionSample::from_fn(&g, |x| (5.0 * x[0]).cos());
        let a = one_step_u(&m, &f0).unwrap();
        assert_eq!(a, few_step_u(&m, &f0, 1).unwrap());
        assert_eq!(a, one_step_x1(&Endpoint(&m), &f0).unwrap());
        let c = FunctionSample::constant(&g, 1, 0.25);
        assert_eq!(one_step_x1(&Constant(c.clone()), &f0).unwrap(), c);
        let e1 = euler_baseline(&m, &f0, 1).unwrap();
        assert_eq!(e1, f0.add(&n.forward(&p, &f0, 0.0, 0.0).unwrap()).unwrap());
    }

    struct Conditional {
        f: FunctionSample,
        p: PathParams,
    }

    impl Field for Conditional {
        fn eval(&self, g: &FunctionSample, t: f64, _r: f64) -> Result<FunctionSample> {
            cond_velocity(g, &self.f, t, self.p)
        }
    }

    #[test]
    fn euler_on_conditional_field_reaches_endpoint() {
        let g = Grid::line(16).unwrap();
        let p = PathParams::new(0.01).unwrap();
        let f = FunctionSample::from_fn(&g, |x| (3.0 * x[0]).sin());
        let f0 = FunctionSample::from_fn(&g, |x| 1.0 - x[0]);
        let field = Conditional { f: f.clone(), p };
        let end = euler_baseline(&field, &f0, 512).unwrap();
        let expect = f0.lin_comb(p.sigma_min, &f, 1.0).unwrap();
        assert!(end.max_abs_diff(&expect).unwrap() < 1e-3);
    }

    #[test]
    fn generate_reports_nfe_and_is_deterministic() {
        let g = Grid::line(16).unwrap();
        let n = net(&g);
        let p = n.init_params(4);
        let m = n.bind(&p);
        let mut req = SampleRequest {
            count: 3,
            grid: g.clone(),
            noise: NoiseSpec::matern(0.1, 0.1),
            mode: SampleMode::EulerBaseline,
            steps: 7,
            seed: 11,
            sharpen_eps: None,
        };
        let a = generate(&m, &req, 1).unwrap();
        assert_eq!(a.nfe, 7);
        assert_eq!(a, generate(&m, &req, 1).unwrap());
        req.mode = SampleMode::OneStepU;
        req.steps = 1;
        assert_eq!(generate(&m, &req, 1).unwrap().nfe, 1);
        req.steps = 2;
        assert!(generate(&m, &req, 1).is_err());
        req.steps = 1;
        req.count = 0;
        assert!(generate(&m, &req, 1).unwrap().samples.is_empty());
    }

    #[test]
    fn sharpening_applies_only_to_mollified_noise() {
        let g = Grid::line(16).unwrap();
        let n = net(&g);
        let p = n.zero_params();
        let m = n.bind(&p);
        let mut req = SampleRequest {
            count: 1,
            grid: g.clone(),
            noise: NoiseSpec::MollifiedWhite { mollify_l: 1.0 },
            mode: SampleMode::OneStepU,
            steps: 1,
            seed: 1,
            sharpen_eps: Some(1e-3),
        };
        let sharp = generate(&m, &req, 1).unwrap().samples[0].clone();
        req.sharpen_eps = None;
        let plain = generate(&m, &req, 1).unwrap().samples[0].clone();
        assert_ne!(sharp, plain);
        req.noise = NoiseSpec::matern(0.1, 0.1);
        req.sharpen_eps = Some(1e-3);
        let a = generate(&m, &req, 1).unwrap();
        req.sharpen_eps = None;
        assert_eq!(a, generate(&m, &req, 1).unwrap());
    }
}
