//! Mean-flow training: time-pair sampling, regression targets with
//! stop-gradient semantics, the adaptive loss, Adam, and the training loop.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use crate::cond_path::TimePair;
pub use crate::datasets::AtomDataset;

use crate::cond_path::{cond_velocity, cond_x1_target, interpolant, PathParams};
use crate::error::{FmfError, Result};
use crate::function_space::{norm_sq, FunctionSample, NoiseSampler};
use crate::metrics::variance_monitor;
use crate::operator::{
    detach, DifferentiableField, NeuralOperator, OperatorParams, TangentTriple,
};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSamplerKind {
    Uniform,
    LogitNormal,
}

/// Law of the `(t, r)` pair: two base draws, sorted, then `r := t` with
/// probability `p_equal`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSamplerSpec {
    pub kind: TimeSamplerKind,
    pub mu: f64,
    pub sigma: f64,
    pub p_equal: f64,
}

impl Default for TimeSamplerSpec {
    /// Logit-normal with location -0.4, scale 0.1 and `p_equal = 0.25`.
    fn default() -> Self {
        Self {
            kind: TimeSamplerKind::LogitNormal,
            mu: -0.4,
            sigma: 0.1,
            p_equal: 0.25,
        }
    }
}

impl TimeSamplerSpec {
    pub fn uniform(p_equal: f64) -> Self {
        Self {
            kind: TimeSamplerKind::Uniform,
            mu: 0.0,
            sigma: 1.0,
            p_equal,
        }
    }

    pub fn logit_normal(mu: f64, sigma: f64, p_equal: f64) -> Self {
        Self {
            kind: TimeSamplerKind::LogitNormal,
            mu,
            sigma,
            p_equal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_equal) {
            return Err(FmfError::param("p_equal must lie in [0, 1]"));
        }
        if self.kind == TimeSamplerKind::LogitNormal
            && !(self.sigma.is_finite() && self.sigma > 0.0 && self.mu.is_finite())
        {
            return Err(FmfError::param("logit-normal sampler needs finite mu and sigma > 0"));
        }
        Ok(())
    }

    fn base<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            TimeSamplerKind::Uniform => rng.random(),
            TimeSamplerKind::LogitNormal => {
                let z: f64 = rng.sample(StandardNormal);
                1.0 / (1.0 + (-(self.mu + self.sigma * z)).exp())
            }
        }
    }
}

pub fn sample_time_pair<R: Rng + ?Sized>(spec: &TimeSamplerSpec, rng: &mut R) -> TimePair {
    let a = spec.base(rng);
    let b = spec.base(rng);
    let (t, mut r) = if a <= b { (a, b) } else { (b, a) };
    let u: f64 = rng.random();
    if u < spec.p_equal {
        r = t;
    }
    TimePair { t, r }
}

/// Mean-velocity target `(r - t) sg(d/dt u(g, t, r) along (v, 1, 0)) + v`.
/// Returns `(model value, detached target)`.
pub fn u_target(
    model: &impl DifferentiableField,
    g: &FunctionSample,
    v: &FunctionSample,
    t: f64,
    r: f64,
) -> Result<(FunctionSample, FunctionSample)> {
    let (value, dir) = model.jvp(g, t, r, &u_tangent(v))?;
    Ok((value, assemble_u_target(v, &dir, t, r)?))
}

fn u_tangent(v: &FunctionSample) -> TangentTriple {
    TangentTriple {
        dg: v.clone(),
        dt: 1.0,
        dr: 0.0,
    }
}

fn assemble_u_target(
    v: &FunctionSample,
    dir: &FunctionSample,
    t: f64,
    r: f64,
) -> Result<FunctionSample> {
    Ok(detach(&v.lin_comb(1.0, &detach(dir), r - t)?))
}

fn x1_tangent(g: &FunctionSample, f1_f: &FunctionSample, t: f64) -> Result<TangentTriple> {
    Ok(TangentTriple {
        dg: f1_f.sub(g)?,
        dt: 1.0 - t,
        dr: 0.0,
    })
}

fn assemble_x1_target(
    f1_f: &FunctionSample,
    dir: &FunctionSample,
    t: f64,
    r: f64,
    r_clip_eps: f64,
) -> Result<FunctionSample> {
    let denom = (1.0 - r).max(r_clip_eps);
    if r == t {
        return Ok(f1_f.clone());
    }
    if denom <= 0.0 {
        return Err(FmfError::SingularTime(
            "endpoint target at r = 1 needs r_clip_eps > 0".into(),
        ));
    }
    Ok(detach(&f1_f.lin_comb(1.0, &detach(dir), (r - t) / denom)?))
}

/// Endpoint target
/// `(r - t) / max(1 - r, eps) sg(d/dt x1(g, t, r) along (f1 - g, 1 - t, 0)) + f1`.
/// Returns `(model value, detached target)`.
pub fn x1_target(
    model: &impl DifferentiableField,
    g: &FunctionSample,
    f1_f: &FunctionSample,
    t: f64,
    r: f64,
    r_clip_eps: f64,
) -> Result<(FunctionSample, FunctionSample)> {
    let (value, dir) = model.jvp(g, t, r, &x1_tangent(g, f1_f, t)?)?;
    Ok((value, assemble_x1_target(f1_f, &dir, t, r, r_clip_eps)?))
}

/// `|d|^2 / (|d|^2 + c)^p`, plus the weight `1 / (|d|^2 + c)^p` treated as a
/// constant for differentiation.
pub fn adaptive_loss(error: &FunctionSample, c: f64, p: f64) -> (f64, f64) {
    let e2 = norm_sq(error);
    let w = 1.0 / (e2 + c).powf(p);
    (w * e2, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Regress the mean velocity.
    FmfU,
    /// Regress the extrapolated endpoint.
    FmfX1,
    /// Instantaneous flow matching: `fmf_u` with `r = t` always.
    FfmBaseline,
}

impl Objective {
    pub fn default_sigma_min(self) -> f64 {
        match self {
            Objective::FmfX1 => 1e-4,
            _ => 0.0,
        }
    }

    pub fn predicts_endpoint(self) -> bool {
        self == Objective::FmfX1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub path: PathParams,
    pub time_sampler: TimeSamplerSpec,
    pub adaptive_c: f64,
    pub adaptive_p: f64,
    pub learning_rate: f64,
    /// Steps at which the learning rate is multiplied by `lr_gamma`.
    pub lr_milestones: Vec<usize>,
    pub lr_gamma: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub r_clip_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::FmfU,
            path: PathParams::default(),
            time_sampler: TimeSamplerSpec::default(),
            adaptive_c: 1e-3,
            adaptive_p: 0.75,
            learning_rate: 1e-3,
            lr_milestones: Vec::new(),
            lr_gamma: 0.1,
            batch_size: 16,
            steps: 1000,
            seed: 0,
            r_clip_eps: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.path.validate()?;
        self.time_sampler.validate()?;
        let field = |name: &str, msg: &str| Err(FmfError::config(name, msg));
        if !(self.adaptive_c.is_finite() && self.adaptive_c > 0.0) {
            return field("train.adaptive_c", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.adaptive_p) {
            return field("train.adaptive_p", "must lie in [0, 1]");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return field("train.learning_rate", "must be nonnegative");
        }
        if !(self.lr_gamma.is_finite() && self.lr_gamma > 0.0) {
            return field("train.lr_gamma", "must be positive");
        }
        if self.steps == 0 {
            return field("train.steps", "must be >= 1");
        }
        if self.batch_size == 0 {
            return field("train.batch_size", "must be >= 1");
        }
        if !(self.r_clip_eps.is_finite() && self.r_clip_eps >= 0.0) {
            return field("train.r_clip_eps", "must be nonnegative");
        }
        Ok(())
    }

    /// Applies objective-implied settings (`ffm_baseline` forces `p_equal = 1`).
    pub fn normalized(mut self) -> Self {
        if self.objective == Objective::FfmBaseline {
            self.time_sampler.p_equal = 1.0;
        }
        self
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let k = self.lr_milestones.iter().filter(|&&m| m <= step).count();
        self.learning_rate * self.lr_gamma.powi(k as i32)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mh = *m / b1t;
            let vh = *v / b2t;
            *p -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    pub error_norm: f64,
    pub output_variance: f64,
    pub lr: f64,
    pub t_mean: f64,
    pub r_mean: f64,
}

pub const LOG_HEADER: [&str; 7] = [
    "step",
    "loss",
    "error_norm",
    "output_variance",
    "lr",
    "t_mean",
    "r_mean",
];

/// Writes the log as CSV with [`LOG_HEADER`] columns.
pub fn write_log<W: std::io::Write>(out: W, log: &[LogRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| FmfError::Io(std::io::Error::other(e));
    w.write_record(LOG_HEADER).map_err(io)?;
    for r in log {
        w.write_record([
            r.step.to_string(),
            format!("{:?}", r.loss),
            format!("{:?}", r.error_norm),
            format!("{:?}", r.output_variance),
            format!("{:?}", r.lr),
            format!("{:?}", r.t_mean),
            format!("{:?}", r.r_mean),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// One training example with its detached target.
#[derive(Debug, Clone)]
pub struct Example {
    pub g: FunctionSample,
    pub pair: TimePair,
    /// Conditional velocity (u-objectives) or conditional endpoint (x1).
    pub conditional: FunctionSample,
}

/// Mutable trainer state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: OperatorParams,
    pub optimizer: Adam,
    pub step: usize,
}

impl TrainState {
    pub fn new(params: OperatorParams) -> Self {
        let n = params.len();
        Self {
            params,
            optimizer: Adam::new(n),
            step: 0,
        }
    }
}

/// Samples the batch for `step`; every draw is seeded from
/// `(seed, step, index)`.
pub fn sample_batch(
    cfg: &TrainConfig,
    data: &AtomDataset,
    noise: &NoiseSampler,
    step: usize,
) -> Result<Vec<Example>> {
    (0..cfg.batch_size)
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(cfg.seed, step as u64, i as u64));
            let f = &data.atoms()[data.sample_index(&mut rng)];
            let f0 = noise.sample_with(&mut rng, data.channels());
            let pair = sample_time_pair(&cfg.time_sampler, &mut rng);
            let g = interpolant(&f0, f, pair.t, cfg.path)?;
            let conditional = if cfg.objective.predicts_endpoint() {
                cond_x1_target(&g, f, pair.t, cfg.path)?
            } else {
                cond_velocity(&g, f, pair.t, cfg.path)?
            };
            Ok(Example { g, pair, conditional })
        })
        .collect()
}

/// Result of one optimizer step.
#[derive(Debug, Clone)]
pub enum StepOutcome {
    Ok(LogRecord),
    /// The loss or gradient was not finite; parameters were left untouched.
    Diverged(LogRecord),
}

/// Builds targets with the current parameters, evaluates the adaptive loss
/// and applies one Adam update.
pub fn train_step(
    net: &NeuralOperator,
    cfg: &TrainConfig,
    state: &mut TrainState,
    batch: &[Example],
) -> Result<StepOutcome> {
    let n_batch = batch.len() as f64;
    let mut grad = vec![0.0; state.params.len()];
    let (mut loss, mut err_norm) = (0.0, 0.0);
    let mut outputs = Vec::with_capacity(batch.len());
    for ex in batch {
        let TimePair { t, r } = ex.pair;
        let (trace, target) = if r == t {
            // the directional term is multiplied by zero; skip the JVP
            (net.forward_traced(&state.params, &ex.g, t, r)?, ex.conditional.clone())
        } else if cfg.objective.predicts_endpoint() {
            let tan = x1_tangent(&ex.g, &ex.conditional, t)?;
            let (trace, dir) = net.jvp_traced(&state.params, &ex.g, t, r, &tan)?;
            let target = assemble_x1_target(&ex.conditional, &dir, t, r, cfg.r_clip_eps)?;
            (trace, target)
        } else {
            let tan = u_tangent(&ex.conditional);
            let (trace, dir) = net.jvp_traced(&state.params, &ex.g, t, r, &tan)?;
            (trace, assemble_u_target(&ex.conditional, &dir, t, r)?)
        };
        let err = trace.output().sub(&target)?;
        let (l, w) = adaptive_loss(&err, cfg.adaptive_c, cfg.adaptive_p);
        loss += l / n_batch;
        err_norm += norm_sq(&err).sqrt() / n_batch;
        // d/dy (w |y - target|^2) with w frozen; |.|^2 is a mean over values
        let ct = err.scale(2.0 * w / (err.values().len() as f64 * n_batch));
        net.backward_into(&state.params, &trace, &ct, &mut grad)?;
        outputs.push(trace.output().clone());
    }
    let lr = cfg.lr_at(state.step);
    let record = LogRecord {
        step: state.step,
        loss,
        error_norm: err_norm,
        output_variance: variance_monitor(&outputs)?,
        lr,
        t_mean: batch.iter().map(|e| e.pair.t).sum::<f64>() / n_batch,
        r_mean: batch.iter().map(|e| e.pair.r).sum::<f64>() / n_batch,
    };
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Ok(StepOutcome::Diverged(record));
    }
    state.optimizer.step(state.params.values_mut(), &grad, lr);
    state.step += 1;
    Ok(StepOutcome::Ok(record))
}

/// Final state of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: OperatorParams,
    pub steps_done: usize,
    pub log: Vec<LogRecord>,
    /// Set when training stopped on a non-finite loss.
    pub failure: Option<String>,
}

/// Full training run; a pure function of its inputs.
pub fn train(
    net: &NeuralOperator,
    init: OperatorParams,
    cfg: &TrainConfig,
    data: &AtomDataset,
    noise: &NoiseSampler,
) -> Result<TrainOutcome> {
    train_with(net, init, cfg, data, noise, |_| {})
}

/// [`train`] with a callback invoked after every step.
pub fn train_with(
    net: &NeuralOperator,
    init: OperatorParams,
    cfg: &TrainConfig,
    data: &AtomDataset,
    noise: &NoiseSampler,
    mut on_step: impl FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.grid() != net.grid() || noise.grid() != net.grid() {
        return Err(FmfError::shape("dataset, noise and model grids must agree"));
    }
    let mut state = TrainState::new(init);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = sample_batch(cfg, data, noise, step)?;
        match train_step(net, cfg, &mut state, &batch)? {
            StepOutcome::Ok(rec) => {
                on_step(&rec);
                log.push(rec);
            }
            StepOutcome::Diverged(rec) => {
                let why = format!("non-finite loss at step {} (loss = {})", rec.step, rec.loss);
                log.push(rec);
                return Ok(TrainOutcome {
                    params: state.params,
                    steps_done: state.step,
                    log,
                    failure: Some(why),
                });
            }
        }
    }
    Ok(TrainOutcome {
        params: state.params,
        steps_done: state.step,
        log,
        failure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cond_path::{u_to_x1, x1_to_u};
    use crate::function_space::{Grid, NoiseSpec};
    use crate::operator::{Field, OperatorConfig, Query};

    fn net(grid: &Grid) -> NeuralOperator {
        let cfg = OperatorConfig {
            in_channels: 1,
            hidden_channels: 6,
            modes: vec![4],
            layers: 2,
            projection_channels: 6,
            time_scale: 1.0,
        };
        NeuralOperator::new(cfg, grid).unwrap()
    }

    fn random(grid: &Grid, rng: &mut impl Rng) -> FunctionSample {
        let v = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        FunctionSample::new(grid.clone(), 1, v).unwrap()
    }

    #[test]
    fn time_pairs_are_ordered_and_equal_when_asked() {
        let mut rng = rng_from_seed(0);
        let u = TimeSamplerSpec::uniform(0.0);
        for _ in 0..10_000 {
            let p = sample_time_pair(&u, &mut rng);
            assert!(p.t <= p.r && (0.0..=1.0).contains(&p.t));
        }
        let eq = TimeSamplerSpec::uniform(1.0);
        for _ in 0..100 {
            let p = sample_time_pair(&eq, &mut rng);
            assert_eq!(p.t, p.r);
        }
    }

    #[test]
    fn logit_normal_marginal_median() {
        let spec = TimeSamplerSpec::logit_normal(-0.4, 0.1, 0.0);
        let mut rng = rng_from_seed(1);
        let mut ts = Vec::new();
        let mut rs = Vec::new();
        for _ in 0..100_000 {
            let p = sample_time_pair(&spec, &mut rng);
            ts.push(p.t);
            rs.push(p.r);
        }
        // pooled t and r are the two unsorted base draws
        let mut pooled: Vec<f64> = ts.iter().chain(&rs).cloned().collect();
        pooled.sort_by(f64::total_cmp);
        let median = pooled[pooled.len() / 2];
        let expect = 1.0 / (1.0 + 0.4f64.exp());
        assert!((median - expect).abs() < 0.02, "{median}");
    }

    #[test]
    fn adaptive_loss_cases() {
        let g = Grid::line(8).unwrap();
        let z = FunctionSample::zeros(&g, 1);
        assert_eq!(adaptive_loss(&z, 1e-3, 0.75).0, 0.0);
        let e = FunctionSample::constant(&g, 1, 0.7);
        assert!((adaptive_loss(&e, 1e-3, 0.0).0 - 0.49).abs() < 1e-15);
        let c: f64 = 1e-3;
        let big = FunctionSample::constant(&g, 1, (1e6 * c).sqrt());
        let (l, _) = adaptive_loss(&big, c, 1.0);
        assert!((l - 1.0).abs() < 1e-3);
    }

    #[test]
    fn targets_reduce_at_equal_times() {
        let g = Grid::line(16).unwrap();
        let n = net(&g);
        let params = n.init_params(1);
        let m = n.bind(&params);
        let mut rng = rng_from_seed(2);
        let (x, v) = (random(&g, &mut rng), random(&g, &mut rng));
        let (_, tu) = u_target(&m, &x, &v, 0.4, 0.4).unwrap();
        assert_eq!(tu, v);
        let (_, tx) = x1_target(&m, &x, &v, 0.4, 0.4, 1e-4).unwrap();
        assert_eq!(tx, v);
        let zero = n.zero_params();
        let z = n.bind(&zero);
        assert_eq!(u_target(&z, &x, &v, 0.1, 0.9).unwrap().1, v);
        assert_eq!(x1_target(&z, &x, &v, 0.1, 0.9, 1e-4).unwrap().1, v);
        assert!(matches!(
            x1_target(&m, &x, &v, 0.1, 1.0, 0.0),
            Err(FmfError::SingularTime(_))
        ));
    }

    /// A u-model presented as an endpoint model via `x1 = (1 - t) u + g`.
    struct AsEndpoint<'a, M>(&'a M);

    impl<M: DifferentiableField> Field for AsEndpoint<'_, M> {
        fn eval(&self, g: &FunctionSample, t: f64, r: f64) -> Result<FunctionSample> {
            u_to_x1(&self.0.eval(g, t, r)?, g, t)
        }
    }

    impl<M: DifferentiableField> DifferentiableField for AsEndpoint<'_, M> {
        fn jvp(
            &self,
            g: &FunctionSample,
            t: f64,
            r: f64,
            tan: &TangentTriple,
        ) -> Result<(FunctionSample, FunctionSample)> {
            let (u, du) = self.0.jvp(g, t, r, tan)?;
            // d[(1 - t) u + g] = (1 - t) du - dt u + dg
            let x = u_to_x1(&u, g, t)?;
            let dx = du.lin_comb(1.0 - t, &u, -tan.dt)?.add(&tan.dg)?;
            Ok((x, dx))
        }
    }

    #[test]
    fn endpoint_and_velocity_targets_agree_under_change_of_variables() {
        // With X = (1 - t) U + g, the two regression errors are proportional:
        // X - x1_tgt = (1 - t)^2 / (1 - r) (U - u_tgt). The targets coincide
        // exactly at the fixed point (zero error) and the losses share minimizers.
        let g = Grid::line(16).unwrap();
        let n = net(&g);
        let params = n.init_params(3);
        let um = n.bind(&params);
        let xm = AsEndpoint(&um);
        let mut rng = rng_from_seed(4);
        let p = PathParams::new(0.05).unwrap();
        for _ in 0..20 {
            let (f0, f) = (random(&g, &mut rng), random(&g, &mut rng));
            let t: f64 = rng.random_range(0.0..0.6);
            let r: f64 = rng.random_range(t..0.95);
            let x = interpolant(&f0, &f, t, p).unwrap();
            let v = cond_velocity(&x, &f, t, p).unwrap();
            let f1 = cond_x1_target(&x, &f, t, p).unwrap();
            let (uv, ut) = u_target(&um, &x, &v, t, r).unwrap();
            let (xv, xt) = x1_target(&xm, &x, &f1, t, r, 1e-4).unwrap();
            let eu = uv.sub(&ut).unwrap();
            let ex = xv.sub(&xt).unwrap();
            let k = (1.0 - t).powi(2) / (1.0 - r);
            let scale = norm_sq(&ex).sqrt().max(1e-12);
            let gap = ex.lin_comb(1.0, &eu, -k).unwrap();
            assert!(norm_sq(&gap).sqrt() / scale < 1e-8);
            // at the fixed point (eu = 0) the endpoint target is u_to_x1(u_tgt)
            // xt - u_to_x1(ut) = (1 - t) eu - ex
            let implied = u_to_x1(&ut, &x, t).unwrap();
            let lhs = xt.sub(&implied).unwrap();
            let rhs = eu.lin_comb(1.0 - t, &ex, -1.0).unwrap();
            assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-9);
            let back = x1_to_u(&xv, &x, t).unwrap();
            assert!(back.max_abs_diff(&uv).unwrap() < 1e-12);
        }
    }

    #[test]
    fn stop_gradient_equals_frozen_copy() {
        let g = Grid::line(16).unwrap();
        let n = net(&g);
        let params = n.init_params(5);
        let mut rng = rng_from_seed(6);
        let (x, v) = (random(&g, &mut rng), random(&g, &mut rng));
        let (t, r) = (0.2, 0.7);
        let (_, target) = u_target(&n.bind(&params), &x, &v, t, r).unwrap();
        let frozen = FunctionSample::new(g.clone(), 1, target.values().to_vec()).unwrap();
        let q = [Query { g: x.clone(), t, r }];
        let sq = |tgt: FunctionSample| {
            move |outs: &[FunctionSample]| -> Result<(f64, Vec<FunctionSample>)> {
                let e = outs[0].sub(&tgt)?;
                let n = e.values().len() as f64;
                Ok((norm_sq(&e), vec![e.scale(2.0 / n)]))
            }
        };
        let (_, g1) = n.param_gradient(&params, &q, &sq(target.clone())).unwrap();
        let (_, g2) = n.param_gradient(&params, &q, &sq(frozen)).unwrap();
        assert_eq!(g1, g2);

        // the analytic gradient matches finite differences with the target
        // held fixed, and differs from differentiating through the target
        let loss = |p: &OperatorParams, recompute: bool| {
            let out = n.forward(p, &x, t, r).unwrap();
            let tgt = if recompute {
                u_target(&n.bind(p), &x, &v, t, r).unwrap().1
            } else {
                target.clone()
            };
            norm_sq(&out.sub(&tgt).unwrap())
        };
        let eps = 1e-6;
        let mut max_fixed: f64 = 0.0;
        let mut max_through: f64 = 0.0;
        for i in (0..params.len()).step_by(params.len() / 15) {
            let mut a = params.clone();
            a.values_mut()[i] += eps;
            let mut b = params.clone();
            b.values_mut()[i] -= eps;
            let fixed = (loss(&a, false) - loss(&b, false)) / (2.0 * eps);
            let through = (loss(&a, true) - loss(&b, true)) / (2.0 * eps);
            max_fixed = max_fixed.max((fixed - g1[i]).abs());
            max_through = max_through.max((through - g1[i]).abs());
        }
        assert!(max_fixed < 1e-6, "{max_fixed}");
        assert!(max_through > 1e-4, "{max_through}");
    }

    fn tiny_setup() -> (Grid, NeuralOperator, AtomDataset, NoiseSampler) {
        let g = Grid::line(16).unwrap();
        let n = net(&g);
        let f = FunctionSample::from_fn(&g, |x| (2.0 * std::f64::consts::PI * x[0]).sin());
        let d = AtomDataset::uniform(vec![f]).unwrap();
        let noise = NoiseSampler::new(&g, &NoiseSpec::matern(0.2, 0.1)).unwrap();
        (g, n, d, noise)
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (_, n, d, noise) = tiny_setup();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            steps: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let init = n.init_params(1);
        let out = train(&n, init.clone(), &cfg, &d, &noise).unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.log.len(), 1);
    }

    #[test]
    fn overfits_single_atom_and_is_deterministic() {
        let (_, n, d, noise) = tiny_setup();
        for objective in [Objective::FmfU, Objective::FmfX1] {
            let cfg = TrainConfig {
                objective,
                path: PathParams::new(objective.default_sigma_min()).unwrap(),
                time_sampler: TimeSamplerSpec::uniform(0.25),
                steps: 200,
                batch_size: 8,
                learning_rate: 3e-3,
                ..TrainConfig::default()
            };
            let a = train(&n, n.init_params(2), &cfg, &d, &noise).unwrap();
            let head: f64 = a.log[..10].iter().map(|r| r.loss).sum::<f64>() / 10.0;
            let tail: f64 = a.log[190..].iter().map(|r| r.loss).sum::<f64>() / 10.0;
            assert!(tail < 0.5 * head, "{objective:?}: {head} -> {tail}");
            let b = train(&n, n.init_params(2), &cfg, &d, &noise).unwrap();
            assert_eq!(a.params, b.params);
        }
    }

    #[test]
    fn ffm_baseline_forces_equal_times() {
        let cfg = TrainConfig {
            objective: Objective::FfmBaseline,
            ..TrainConfig::default()
        }
        .normalized();
        assert_eq!(cfg.time_sampler.p_equal, 1.0);
    }

    #[test]
    fn lr_schedule_is_piecewise_constant() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            lr_milestones: vec![10, 20],
            lr_gamma: 0.5,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(0), 1.0);
        assert_eq!(cfg.lr_at(10), 0.5);
        assert_eq!(cfg.lr_at(25), 0.25);
    }

    #[test]
    fn log_csv_has_documented_header() {
        let mut buf = Vec::new();
        write_log(&mut buf, &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,loss,error_norm,output_variance,lr,t_mean,r_mean\n"
        );
    }
}
