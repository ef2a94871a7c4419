//! A minimal Fourier neural operator conditioned on a time pair `(t, r)`.
//!
//! The input function is channel-concatenated with its grid coordinates and
//! two constant channels holding the scaled times, lifted pointwise, passed
//! through `layers` spectral blocks `h <- gelu(K h + W h + b)` (no activation
//! after the last block) and projected back pointwise through a GELU MLP.
//!
//! Three evaluation routes share one implementation:
//!
//! - [`NeuralOperator::forward`] evaluates the network,
//! - [`NeuralOperator::jvp`] propagates a tangent `(dg, dt, dr)` alongside the
//!   forward pass and returns the exact directional derivative,
//! - [`NeuralOperator::param_gradient`] back-propagates a loss defined on
//!   network outputs to the flat parameter vector.

mod spectral;

pub use spectral::SpectralBasis;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FmfError, Result};
use crate::function_space::{FunctionSample, Grid};
use crate::rng::rng_from_seed;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorConfig {
    /// Data channels of the modeled functions; the lifted input additionally
    /// carries `dim` coordinate channels and the two time channels.
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub modes: Vec<usize>,
    pub layers: usize,
    pub projection_channels: usize,
    pub time_scale: f64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            hidden_channels: 64,
            modes: vec![16],
            layers: 4,
            projection_channels: 64,
            time_scale: 1e-3,
        }
    }
}

impl OperatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.hidden_channels == 0
            || self.layers == 0
            || self.projection_channels == 0
            || self.modes.is_empty()
            || self.modes.contains(&0)
        {
            return Err(FmfError::param("operator channel, layer and mode counts must be >= 1"));
        }
        if !(self.time_scale.is_finite() && self.time_scale > 0.0) {
            return Err(FmfError::param("time_scale must be positive"));
        }
        Ok(())
    }

    fn lifted_channels(&self, dim: usize) -> usize {
        self.in_channels + dim + 2
    }
}

/// One named block in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered description of the flat parameter vector.
///
/// Blocks, in order: `lift.w [H, Cin]`, `lift.b [H]`, then per layer `l`
/// `layer{l}.spectral [M, H, H, 2]` (complex pairs), `layer{l}.skip.w [H, H]`,
/// `layer{l}.skip.b [H]`, then `proj.w [P, H]`, `proj.b [P]`, `out.w [C, P]`,
/// `out.b [C]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    blocks: Vec<ParamBlock>,
    total: usize,
}

impl ParamLayout {
    fn build(cfg: &OperatorConfig, dim: usize, modes: usize) -> Self {
        let (h, p, c) = (cfg.hidden_channels, cfg.projection_channels, cfg.in_channels);
        let cin = cfg.lifted_channels(dim);
        let mut shapes: Vec<(String, Vec<usize>)> = vec![
            ("lift.w".into(), vec![h, cin]),
            ("lift.b".into(), vec![h]),
        ];
        for l in 0..cfg.layers {
            shapes.push((format!("layer{l}.spectral"), vec![modes, h, h, 2]));
            shapes.push((format!("layer{l}.skip.w"), vec![h, h]));
            shapes.push((format!("layer{l}.skip.b"), vec![h]));
        }
        shapes.push(("proj.w".into(), vec![p, h]));
        shapes.push(("proj.b".into(), vec![p]));
        shapes.push(("out.w".into(), vec![c, p]));
        shapes.push(("out.b".into(), vec![c]));
        let mut offset = 0;
        let blocks = shapes
            .into_iter()
            .map(|(name, shape)| {
                let b = ParamBlock {
                    name,
                    offset,
                    shape,
                };
                offset += b.len();
                b
            })
            .collect();
        Self {
            blocks,
            total: offset,
        }
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

/// Flat parameter vector; the layout lives on the [`NeuralOperator`].
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorParams {
    values: Vec<f64>,
}

impl OperatorParams {
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FmfError::numerical("parameters must be finite"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Tangent direction `(dg, dt, dr)` for forward-mode differentiation.
#[derive(Debug, Clone)]
pub struct TangentTriple {
    pub dg: FunctionSample,
    pub dt: f64,
    pub dr: f64,
}

/// A time-pair-conditioned function-to-function map.
pub trait Field {
    fn eval(&self, g: &FunctionSample, t: f64, r: f64) -> Result<FunctionSample>;
}

/// A [`Field`] with an exact directional derivative.
pub trait DifferentiableField: Field {
    /// Returns `(value, directional derivative along tangent)`.
    fn jvp(
        &self,
        g: &FunctionSample,
        t: f64,
        r: f64,
        tangent: &TangentTriple,
    ) -> Result<(FunctionSample, FunctionSample)>;
}

/// Copy of a value that the caller treats as a constant in gradient
/// computations. Gradients here are only ever taken through network outputs,
/// so detaching is a plain copy; the explicit call marks stop-gradient sites.
pub fn detach(f: &FunctionSample) -> FunctionSample {
    f.clone()
}

/// One network evaluation point.
#[derive(Debug, Clone)]
pub struct Query {
    pub g: FunctionSample,
    pub t: f64,
    pub r: f64,
}

/// Scalar loss over network outputs, returning the loss and its gradient with
/// respect to each output.
pub trait OutputLoss {
    fn evaluate(&self, outputs: &[FunctionSample]) -> Result<(f64, Vec<FunctionSample>)>;
}

impl<F> OutputLoss for F
where
    F: Fn(&[FunctionSample]) -> Result<(f64, Vec<FunctionSample>)>,
{
    fn evaluate(&self, outputs: &[FunctionSample]) -> Result<(f64, Vec<FunctionSample>)> {
        self(outputs)
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

/// Intermediate activations of one forward pass, kept for back-propagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    hidden: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    spec_re: Vec<Vec<f64>>,
    spec_im: Vec<Vec<f64>>,
    proj_pre: Vec<f64>,
    proj_act: Vec<f64>,
    output: FunctionSample,
}

impl ForwardTrace {
    pub fn output(&self) -> &FunctionSample {
        &self.output
    }
}

/// The network structure bound to one grid. Parameters are passed
/// separately so the same operator can evaluate many parameter vectors.
#[derive(Debug, Clone)]
pub struct NeuralOperator {
    cfg: OperatorConfig,
    grid: Grid,
    basis: SpectralBasis,
    layout: ParamLayout,
    coord_channels: Vec<Vec<f64>>,
}

/// `out[o][p] (+)= b[o] + sum_i w[o][i] x[i][p]`.
fn pointwise(w: &[f64], b: Option<&[f64]>, x: &[f64], cin: usize, cout: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; cout * n];
    for o in 0..cout {
        let row = &mut out[o * n..(o + 1) * n];
        if let Some(b) = b {
            row.iter_mut().for_each(|v| *v = b[o]);
        }
        for i in 0..cin {
            let wi = w[o * cin + i];
            if wi == 0.0 {
                continue;
            }
            let xi = &x[i * n..(i + 1) * n];
            for (r, &xv) in row.iter_mut().zip(xi) {
                *r += wi * xv;
            }
        }
    }
    out
}

/// Adds `d/dw` and returns `d/dx` of a pointwise affine map given `dy`.
#[allow(clippy::too_many_arguments)]
fn pointwise_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    cin: usize,
    cout: usize,
    n: usize,
    gw: &mut [f64],
    gb: &mut [f64],
    need_dx: bool,
) -> Vec<f64> {
    let mut dx = if need_dx { vec![0.0; cin * n] } else { Vec::new() };
    for o in 0..cout {
        let dyo = &dy[o * n..(o + 1) * n];
        gb[o] += dyo.iter().sum::<f64>();
        for i in 0..cin {
            let xi = &x[i * n..(i + 1) * n];
            gw[o * cin + i] += dyo.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
            if need_dx {
                let wi = w[o * cin + i];
                let dxi = &mut dx[i * n..(i + 1) * n];
                for (d, &g) in dxi.iter_mut().zip(dyo) {
                    *d += wi * g;
                }
            }
        }
    }
    dx
}

impl NeuralOperator {
    pub fn new(cfg: OperatorConfig, grid: &Grid) -> Result<Self> {
        cfg.validate()?;
        let basis = SpectralBasis::new(grid, &cfg.modes)?;
        let layout = ParamLayout::build(&cfg, grid.dim(), basis.modes());
        let coord_channels = (0..grid.dim()).map(|a| grid.axis_coords(a)).collect();
        Ok(Self {
            cfg,
            grid: grid.clone(),
            basis,
            layout,
            coord_channels,
        })
    }

    pub fn config(&self) -> &OperatorConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn zero_params(&self) -> OperatorParams {
        OperatorParams {
            values: vec![0.0; self.layout.len()],
        }
    }

    /// Deterministic initialization: complex Gaussian spectral weights with
    /// scale `1 / (H * H)`, uniform `+-1/sqrt(fan_in)` pointwise weights and
    /// biases.
    pub fn init_params(&self, seed: u64) -> OperatorParams {
        let mut rng = rng_from_seed(seed);
        let mut values = vec![0.0; self.layout.len()];
        let h = self.cfg.hidden_channels as f64;
        for block in self.layout.blocks() {
            let slot = &mut values[block.range()];
            if block.name.ends_with(".spectral") {
                let scale = 1.0 / (h * h);
                for v in slot.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = scale * z;
                }
            } else {
                let fan_in = if block.name.ends_with(".b") {
                    let w_name = block.name.replace(".b", ".w");
                    self.layout.block(&w_name).map(|w| w.shape[1]).unwrap_or(1)
                } else {
                    block.shape[1]
                };
                let bound = 1.0 / (fan_in as f64).sqrt();
                for v in slot.iter_mut() {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        OperatorParams { values }
    }

    fn check_params(&self, params: &OperatorParams) -> Result<()> {
        if params.len() != self.layout.len() {
            return Err(FmfError::shape(format!(
                "parameter vector has {} entries, layout needs {}",
                params.len(),
                self.layout.len()
            )));
        }
        Ok(())
    }

    fn check_input(&self, g: &FunctionSample) -> Result<()> {
        if g.grid() != &self.grid {
            return Err(FmfError::shape(format!(
                "input grid {:?} does not match operator grid {:?}",
                g.grid().resolution(),
                self.grid.resolution()
            )));
        }
        if g.channels() != self.cfg.in_channels {
            return Err(FmfError::shape(format!(
                "input has {} channels, operator expects {}",
                g.channels(),
                self.cfg.in_channels
            )));
        }
        Ok(())
    }

    fn block<'p>(&self, params: &'p [f64], name: &str) -> &'p [f64] {
        let b = self
            .layout
            .block(name)
            .unwrap_or_else(|| panic!("missing parameter block {name}"));
        &params[b.range()]
    }

    fn assemble_input(&self, g: &FunctionSample, t: f64, r: f64) -> Vec<f64> {
        let n = self.grid.len();
        let mut x = Vec::with_capacity(self.cfg.lifted_channels(self.grid.dim()) * n);
        x.extend_from_slice(g.values());
        for c in &self.coord_channels {
            x.extend_from_slice(c);
        }
        x.extend(std::iter::repeat_n(t * self.cfg.time_scale, n));
        x.extend(std::iter::repeat_n(r * self.cfg.time_scale, n));
        x
    }

    fn assemble_tangent(&self, tangent: &TangentTriple) -> Vec<f64> {
        let n = self.grid.len();
        let mut x = Vec::with_capacity(self.cfg.lifted_channels(self.grid.dim()) * n);
        x.extend_from_slice(tangent.dg.values());
        x.extend(std::iter::repeat_n(0.0, self.grid.dim() * n));
        x.extend(std::iter::repeat_n(tangent.dt * self.cfg.time_scale, n));
        x.extend(std::iter::repeat_n(tangent.dr * self.cfg.time_scale, n));
        x
    }

    fn spectral_forward(&self, h: &[f64], ch: usize) -> (Vec<f64>, Vec<f64>) {
        let (np, nm) = (self.basis.points(), self.basis.modes());
        let mut re = vec![0.0; ch * nm];
        let mut im = vec![0.0; ch * nm];
        for c in 0..ch {
            self.basis.forward(
                &h[c * np..(c + 1) * np],
                &mut re[c * nm..(c + 1) * nm],
                &mut im[c * nm..(c + 1) * nm],
            );
        }
        (re, im)
    }

    fn spectral_apply(&self, w: &[f64], re: &[f64], im: &[f64], ch: usize) -> Vec<f64> {
        let (np, nm) = (self.basis.points(), self.basis.modes());
        let (yr, yi) = spectral::mix(w, re, im, ch, ch, nm);
        let mut out = vec![0.0; ch * np];
        for o in 0..ch {
            self.basis.inverse(
                &yr[o * nm..(o + 1) * nm],
                &yi[o * nm..(o + 1) * nm],
                &mut out[o * np..(o + 1) * np],
                true,
            );
        }
        out
    }

    /// Core pass; propagates a tangent alongside the primal when given.
    fn run(
        &self,
        params: &OperatorParams,
        input: Vec<f64>,
        tangent: Option<Vec<f64>>,
    ) -> (ForwardTrace, Option<Vec<f64>>) {
        let p = params.values();
        let n = self.grid.len();
        let h = self.cfg.hidden_channels;
        let cin = self.cfg.lifted_channels(self.grid.dim());
        let proj = self.cfg.projection_channels;
        let cout = self.cfg.in_channels;

        let lift_w = self.block(p, "lift.w");
        let mut hcur = pointwise(lift_w, Some(self.block(p, "lift.b")), &input, cin, h, n);
        let mut dcur = tangent.as_ref().map(|dx| pointwise(lift_w, None, dx, cin, h, n));

        let mut hidden = Vec::with_capacity(self.cfg.layers + 1);
        let mut pre = Vec::with_capacity(self.cfg.layers);
        let mut spec_re = Vec::with_capacity(self.cfg.layers);
        let mut spec_im = Vec::with_capacity(self.cfg.layers);
        for l in 0..self.cfg.layers {
            let sw = self.block(p, &format!("layer{l}.spectral"));
            let kw = self.block(p, &format!("layer{l}.skip.w"));
            let kb = self.block(p, &format!("layer{l}.skip.b"));
            let (re, im) = self.spectral_forward(&hcur, h);
            let mut z = self.spectral_apply(sw, &re, &im, h);
            let skip = pointwise(kw, Some(kb), &hcur, h, h, n);
            z.iter_mut().zip(&skip).for_each(|(a, b)| *a += b);
            let last = l + 1 == self.cfg.layers;
            if let Some(d) = dcur.as_mut() {
                let (dre, dim) = self.spectral_forward(d, h);
                let mut dz = self.spectral_apply(sw, &dre, &dim, h);
                let dskip = pointwise(kw, None, d, h, h, n);
                dz.iter_mut().zip(&dskip).for_each(|(a, b)| *a += b);
                if !last {
                    dz.iter_mut().zip(&z).for_each(|(dv, &zv)| *dv *= gelu_grad(zv));
                }
                *d = dz;
            }
            let next = if last {
                z.clone()
            } else {
                z.iter().map(|&v| gelu(v)).collect()
            };
            hidden.push(std::mem::replace(&mut hcur, next));
            pre.push(z);
            spec_re.push(re);
            spec_im.push(im);
        }
        hidden.push(hcur);
        let h_last = hidden.last().expect("at least one layer");

        let proj_w = self.block(p, "proj.w");
        let out_w = self.block(p, "out.w");
        let q = pointwise(proj_w, Some(self.block(p, "proj.b")), h_last, h, proj, n);
        let a: Vec<f64> = q.iter().map(|&v| gelu(v)).collect();
        let y = pointwise(out_w, Some(self.block(p, "out.b")), &a, proj, cout, n);

        let dy = dcur.map(|d| {
            let mut dq = pointwise(proj_w, None, &d, h, proj, n);
            dq.iter_mut().zip(&q).for_each(|(dv, &qv)| *dv *= gelu_grad(qv));
            pointwise(out_w, None, &dq, proj, cout, n)
        });

        let trace = ForwardTrace {
            input,
            hidden,
            pre,
            spec_re,
            spec_im,
            proj_pre: q,
            proj_act: a,
            output: FunctionSample::from_parts_unchecked(self.grid.clone(), cout, y),
        };
        (trace, dy)
    }

    pub fn forward(
        &self,
        params: &OperatorParams,
        g: &FunctionSample,
        t: f64,
        r: f64,
    ) -> Result<FunctionSample> {
        Ok(self.forward_traced(params, g, t, r)?.output)
    }

    pub fn forward_traced(
        &self,
        params: &OperatorParams,
        g: &FunctionSample,
        t: f64,
        r: f64,
    ) -> Result<ForwardTrace> {
        self.check_params(params)?;
        self.check_input(g)?;
        Ok(self.run(params, self.assemble_input(g, t, r), None).0)
    }

    /// Forward pass plus the exact directional derivative along `tangent`.
    pub fn jvp(
        &self,
        params: &OperatorParams,
        g: &FunctionSample,
        t: f64,
        r: f64,
        tangent: &TangentTriple,
    ) -> Result<(FunctionSample, FunctionSample)> {
        let (trace, dir) = self.jvp_traced(params, g, t, r, tangent)?;
        Ok((trace.output, dir))
    }

    pub fn jvp_traced(
        &self,
        params: &OperatorParams,
        g: &FunctionSample,
        t: f64,
        r: f64,
        tangent: &TangentTriple,
    ) -> Result<(ForwardTrace, FunctionSample)> {
        self.check_params(params)?;
        self.check_input(g)?;
        self.check_input(&tangent.dg)?;
        let (trace, dy) = self.run(
            params,
            self.assemble_input(g, t, r),
            Some(self.assemble_tangent(tangent)),
        );
        let dy = dy.expect("tangent was provided");
        let dir = FunctionSample::from_parts_unchecked(self.grid.clone(), self.cfg.in_channels, dy);
        Ok((trace, dir))
    }

    /// Gradient of `<output_cotangent, output>` with respect to the
    /// parameters, accumulated into `grad`.
    pub fn backward_into(
        &self,
        params: &OperatorParams,
        trace: &ForwardTrace,
        output_cotangent: &FunctionSample,
        grad: &mut [f64],
    ) -> Result<()> {
        self.check_params(params)?;
        output_cotangent.check_compatible(&trace.output)?;
        if grad.len() != self.layout.len() {
            return Err(FmfError::shape("gradient buffer does not match the layout"));
        }
        let p = params.values();
        let n = self.grid.len();
        let h = self.cfg.hidden_channels;
        let cin = self.cfg.lifted_channels(self.grid.dim());
        let proj = self.cfg.projection_channels;
        let cout = self.cfg.in_channels;
        let (np, nm) = (self.basis.points(), self.basis.modes());

        let range = |name: &str| self.layout.block(name).expect("block").range();

        // projection head
        let (ow, ob) = (range("out.w"), range("out.b"));
        let (gw, gb) = split_pair(grad, ow, ob);
        let mut da = pointwise_backward(
            self.block(p, "out.w"),
            &trace.proj_act,
            output_cotangent.values(),
            proj,
            cout,
            n,
            gw,
            gb,
            true,
        );
        da.iter_mut()
            .zip(&trace.proj_pre)
            .for_each(|(d, &q)| *d *= gelu_grad(q));
        let (pw, pb) = (range("proj.w"), range("proj.b"));
        let (gw, gb) = split_pair(grad, pw, pb);
        let mut dh = pointwise_backward(
            self.block(p, "proj.w"),
            &trace.hidden[self.cfg.layers],
            &da,
            h,
            proj,
            n,
            gw,
            gb,
            true,
        );

        for l in (0..self.cfg.layers).rev() {
            let last = l + 1 == self.cfg.layers;
            let mut dz = dh;
            if !last {
                dz.iter_mut()
                    .zip(&trace.pre[l])
                    .for_each(|(d, &z)| *d *= gelu_grad(z));
            }
            let hin = &trace.hidden[l];
            let (kw, kb) = (range(&format!("layer{l}.skip.w")), range(&format!("layer{l}.skip.b")));
            let (gw, gb) = split_pair(grad, kw, kb);
            let mut dhin = pointwise_backward(
                self.block(p, &format!("layer{l}.skip.w")),
                hin,
                &dz,
                h,
                h,
                n,
                gw,
                gb,
                true,
            );

            // spectral path: z += G R F h
            let sw_range = range(&format!("layer{l}.spectral"));
            let sw = &p[sw_range.clone()];
            let mut ybar_re = vec![0.0; h * nm];
            let mut ybar_im = vec![0.0; h * nm];
            for o in 0..h {
                self.basis.inverse_adjoint(
                    &dz[o * np..(o + 1) * np],
                    &mut ybar_re[o * nm..(o + 1) * nm],
                    &mut ybar_im[o * nm..(o + 1) * nm],
                );
            }
            let (xr, xi) = (&trace.spec_re[l], &trace.spec_im[l]);
            let gsw = &mut grad[sw_range];
            let mut xbar_re = vec![0.0; h * nm];
            let mut xbar_im = vec![0.0; h * nm];
            for m in 0..nm {
                let base = m * h * h * 2;
                for o in 0..h {
                    let (br, bi) = (ybar_re[o * nm + m], ybar_im[o * nm + m]);
                    for i in 0..h {
                        let (ar, ai) = (xr[i * nm + m], xi[i * nm + m]);
                        let idx = base + (o * h + i) * 2;
                        // Rbar = Ybar conj(X)
                        gsw[idx] += br * ar + bi * ai;
                        gsw[idx + 1] += bi * ar - br * ai;
                        // Xbar += conj(R) Ybar
                        let (wr, wi) = (sw[idx], sw[idx + 1]);
                        xbar_re[i * nm + m] += wr * br + wi * bi;
                        xbar_im[i * nm + m] += wr * bi - wi * br;
                    }
                }
            }
            let mut tmp = vec![0.0; np];
            for i in 0..h {
                self.basis.inverse(
                    &xbar_re[i * nm..(i + 1) * nm],
                    &xbar_im[i * nm..(i + 1) * nm],
                    &mut tmp,
                    false,
                );
                dhin[i * np..(i + 1) * np]
                    .iter_mut()
                    .zip(&tmp)
                    .for_each(|(d, v)| *d += v);
            }
            dh = dhin;
        }

        let (lw, lb) = (range("lift.w"), range("lift.b"));
        let (gw, gb) = split_pair(grad, lw, lb);
        pointwise_backward(
            self.block(p, "lift.w"),
            &trace.input,
            &dh,
            cin,
            h,
            n,
            gw,
            gb,
            false,
        );
        Ok(())
    }

    /// Exact gradient of `loss(outputs)` where `outputs[i]` is the network
    /// evaluated at `queries[i]`. Returns `(loss, gradient)`.
    pub fn param_gradient(
        &self,
        params: &OperatorParams,
        queries: &[Query],
        loss: &impl OutputLoss,
    ) -> Result<(f64, Vec<f64>)> {
        let traces = queries
            .iter()
            .map(|q| self.forward_traced(params, &q.g, q.t, q.r))
            .collect::<Result<Vec<_>>>()?;
        let outputs: Vec<FunctionSample> = traces.iter().map(|t| t.output.clone()).collect();
        let (value, cotangents) = loss.evaluate(&outputs)?;
        if !value.is_finite() {
            return Err(FmfError::numerical(format!("loss is not finite: {value}")));
        }
        if cotangents.len() != outputs.len() {
            return Err(FmfError::shape("loss returned the wrong number of output gradients"));
        }
        let mut grad = vec![0.0; self.layout.len()];
        for (trace, ct) in traces.iter().zip(&cotangents) {
            self.backward_into(params, trace, ct, &mut grad)?;
        }
        Ok((value, grad))
    }

    /// Binds a parameter vector, giving a [`Field`].
    pub fn bind<'a>(&'a self, params: &'a OperatorParams) -> BoundOperator<'a> {
        BoundOperator { net: self, params }
    }
}

fn split_pair(
    grad: &mut [f64],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [f64], &mut [f64]) {
    debug_assert_eq!(a.end, b.start);
    let (lo, hi) = grad[a.start..b.end].split_at_mut(a.end - a.start);
    (lo, hi)
}

/// A [`NeuralOperator`] together with a parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct BoundOperator<'a> {
    pub net: &'a NeuralOperator,
    pub params: &'a OperatorParams,
}

impl Field for BoundOperator<'_> {
    fn eval(&self, g: &FunctionSample, t: f64, r: f64) -> Result<FunctionSample> {
        self.net.forward(self.params, g, t, r)
    }
}

impl DifferentiableField for BoundOperator<'_> {
    fn jvp(
        &self,
        g: &FunctionSample,
        t: f64,
        r: f64,
        tangent: &TangentTriple,
    ) -> Result<(FunctionSample, FunctionSample)> {
        self.net.jvp(self.params, g, t, r, tangent)
    }
}
