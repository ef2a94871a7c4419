//! Run configuration: a TOML file of dotted `section.key = value` lines.
//!
//! ```toml
//! name = "gp2"
//! seed = 0
//! grid.resolution = [32]
//! dataset.generator = "gp_mixture"
//! dataset.atoms = 2
//! noise.kind = "matern"
//! noise.matern_length = 0.1
//! noise.matern_variance = 1.0
//! train.objective = "fmf_u"
//! train.steps = 200
//! ```
//!
//! Omitted sections take library defaults. [`RunConfig::resolve`] fills in
//! objective-dependent values; the resolved snapshot written by `train`
//! reproduces the run when loaded again.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cond_path::PathParams;
use crate::datasets::{AtomDataset, DatasetSpec};
use crate::error::{FmfError, Result};
use crate::function_space::{mollify, Grid, NoiseSampler, NoiseSpec};
use crate::operator::{NeuralOperator, OperatorConfig};
use crate::sampler::{SampleMode, SampleRequest};
use crate::training::{Objective, TimeSamplerSpec, TrainConfig};

/// Environment variable that overrides `out_dir`.
pub const OUT_DIR_ENV: &str = "FMF_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub resolution: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Mollify every dataset atom by this many pixels.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mollify_l: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSection {
    /// Defaults by objective: 0 for velocity heads, 1e-4 for endpoint heads.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub objective: Objective,
    pub time_sampler: TimeSamplerSpec,
    pub adaptive_c: f64,
    pub adaptive_p: f64,
    pub learning_rate: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_gamma: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub r_clip_eps: f64,
    /// Initialization seed; defaults to the run seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            objective: d.objective,
            time_sampler: d.time_sampler,
            adaptive_c: d.adaptive_c,
            adaptive_p: d.adaptive_p,
            learning_rate: d.learning_rate,
            lr_milestones: d.lr_milestones,
            lr_gamma: d.lr_gamma,
            batch_size: d.batch_size,
            steps: d.steps,
            r_clip_eps: d.r_clip_eps,
            init_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    /// Defaults by objective: one-step for mean-flow heads, Euler for FFM.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<SampleMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sharpen_eps: Option<f64>,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            mode: None,
            steps: None,
            count: 16,
            seed: None,
            sharpen_eps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Relative L2 tolerance for trained-model vs oracle probes.
    pub oracle_tolerance: f64,
    pub probes: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            oracle_tolerance: 0.15,
            probes: 10,
        }
    }
}

fn default_name() -> String {
    "run".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dataset_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    pub grid: GridConfig,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub path: PathSection,
    #[serde(default)]
    pub operator: OperatorConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub verify: VerifySection,
}

fn in_section<T>(section: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        FmfError::Config { .. } | FmfError::Io(_) => e,
        other => FmfError::config(section, other.to_string()),
    })
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let field = e
                .span()
                .map(|s| {
                    let line = text[..s.start].lines().count().max(1);
                    format!("line {line}")
                })
                .unwrap_or_else(|| "config".into());
            FmfError::config(field, msg)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            FmfError::config(path.display().to_string(), format!("cannot read: {e}"))
        })?;
        Self::from_toml(&text)
    }

    pub fn grid(&self) -> Result<Grid> {
        in_section("grid.resolution", Grid::new(&self.grid.resolution))
    }

    /// Fills objective-dependent defaults and cross-checks sections.
    pub fn resolve(mut self) -> Result<Self> {
        let objective = self.train.objective;
        if self.path.sigma_min.is_none() {
            self.path.sigma_min = Some(objective.default_sigma_min());
        }
        if objective == Objective::FfmBaseline {
            self.train.time_sampler.p_equal = 1.0;
        }
        let mode = *self.sample.mode.get_or_insert(match objective {
            Objective::FmfU => SampleMode::OneStepU,
            Objective::FmfX1 => SampleMode::OneStepX1,
            Objective::FfmBaseline => SampleMode::EulerBaseline,
        });
        let steps = *self.sample.steps.get_or_insert(if mode.is_one_step() { 1 } else { 64 });
        if mode.is_one_step() && steps != 1 {
            return Err(FmfError::config("sample.steps", "one-step modes take exactly one step"));
        }
        if self.train.init_seed.is_none() {
            self.train.init_seed = Some(self.seed);
        }
        if self.sample.seed.is_none() {
            self.sample.seed = Some(self.seed.wrapping_add(1));
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        in_section("noise", self.noise.validate())?;
        in_section("operator", self.operator.validate())?;
        in_section("train", self.train_config().validate())?;
        if let Some(l) = self.preprocess.mollify_l {
            if !(l.is_finite() && l > 0.0) {
                return Err(FmfError::config("preprocess.mollify_l", "must be positive"));
            }
        }
        if let NoiseSpec::GridInterp { coarse_resolution } = &self.noise {
            if coarse_resolution.len() != grid.dim()
                || coarse_resolution.iter().zip(grid.resolution()).any(|(c, f)| c > f)
            {
                return Err(FmfError::config(
                    "noise.coarse_resolution",
                    "must have one entry per axis, each at most the grid resolution",
                ));
            }
        }
        if let DatasetSpec::File { path } = &self.dataset {
            if !Path::new(path).is_file() {
                return Err(FmfError::config("dataset.path", format!("`{path}` does not exist")));
            }
        }
        if self.verify.probes == 0 {
            return Err(FmfError::config("verify.probes", "must be >= 1"));
        }
        let tol = self.verify.oracle_tolerance;
        if tol.is_nan() || tol <= 0.0 {
            return Err(FmfError::config("verify.oracle_tolerance", "must be positive"));
        }
        Ok(())
    }

    pub fn path_params(&self) -> PathParams {
        PathParams {
            sigma_min: self
                .path
                .sigma_min
                .unwrap_or_else(|| self.train.objective.default_sigma_min()),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            objective: t.objective,
            path: self.path_params(),
            time_sampler: t.time_sampler,
            adaptive_c: t.adaptive_c,
            adaptive_p: t.adaptive_p,
            learning_rate: t.learning_rate,
            lr_milestones: t.lr_milestones.clone(),
            lr_gamma: t.lr_gamma,
            batch_size: t.batch_size,
            steps: t.steps,
            seed: self.seed,
            r_clip_eps: t.r_clip_eps,
        }
        .normalized()
    }

    pub fn sample_request(&self) -> Result<SampleRequest> {
        let mode = self.sample.mode.unwrap_or(SampleMode::OneStepU);
        Ok(SampleRequest {
            count: self.sample.count,
            grid: self.grid()?,
            noise: self.noise.clone(),
            mode,
            steps: self.sample.steps.unwrap_or(1),
            seed: self.sample.seed.unwrap_or(self.seed),
            sharpen_eps: self.sample.sharpen_eps,
        })
    }

    /// Sorted `key.path = value` lines; loading them yields `self` again.
    pub fn snapshot(&self) -> String {
        let value = toml::Value::try_from(self).expect("config serializes to TOML");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    /// Builds grid, dataset, noise sampler and network for this config.
    pub fn prepare(&self) -> Result<Prepared> {
        let grid = self.grid()?;
        let mut data = in_section("dataset", self.dataset.build(&grid, self.dataset_seed))?;
        if let Some(l) = self.preprocess.mollify_l {
            let atoms = data.atoms().iter().map(|a| mollify(a, l)).collect();
            data = AtomDataset::new(atoms, data.weights().to_vec())?;
        }
        if data.channels() != self.operator.in_channels {
            return Err(FmfError::config(
                "operator.in_channels",
                format!("dataset has {} channels", data.channels()),
            ));
        }
        let noise = in_section("noise", NoiseSampler::new(&grid, &self.noise))?;
        let net = in_section("operator", NeuralOperator::new(self.operator.clone(), &grid))?;
        Ok(Prepared {
            grid,
            data,
            noise,
            net,
        })
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}

/// Everything a command needs, built from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Prepared {
    pub grid: Grid,
    pub data: AtomDataset,
    pub noise: NoiseSampler,
    pub net: NeuralOperator,
}
