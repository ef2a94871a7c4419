//! On-disk formats: sample containers and model checkpoints.
//!
//! Both share one layout: a magic line, `key=value` header lines, a blank
//! line, then raw little-endian `f64` payload. Sample payloads are stored
//! per sample in (channel, point) row-major order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{FmfError, Result};
use crate::function_space::{FunctionSample, Grid};
use crate::operator::{NeuralOperator, OperatorConfig, OperatorParams};

const SAMPLES_MAGIC: &str = "FMF-SAMPLES v1";
const CHECKPOINT_MAGIC: &str = "FMF-CKPT v1";

/// A list of samples on one grid, with optional weights and free-form
/// metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub grid: Grid,
    pub channels: usize,
    pub samples: Vec<FunctionSample>,
    pub weights: Option<Vec<f64>>,
    pub meta: BTreeMap<String, String>,
}

impl SampleSet {
    pub fn new(grid: Grid, channels: usize, samples: Vec<FunctionSample>) -> Result<Self> {
        for s in &samples {
            if s.grid() != &grid || s.channels() != channels {
                return Err(FmfError::shape("sample does not match the container grid"));
            }
        }
        Ok(Self {
            grid,
            channels,
            samples,
            weights: None,
            meta: BTreeMap::new(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = String::new();
        writeln!(head, "{SAMPLES_MAGIC}").unwrap();
        write_grid(&mut head, &self.grid);
        writeln!(head, "channels={}", self.channels).unwrap();
        writeln!(head, "count={}", self.samples.len()).unwrap();
        writeln!(head, "endian=le").unwrap();
        if let Some(w) = &self.weights {
            writeln!(head, "weights={}", join_f64(w)).unwrap();
        }
        write_meta(&mut head, &self.meta);
        head.push('\n');
        let mut out = head.into_bytes();
        for s in &self.samples {
            push_f64s(&mut out, s.values());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = split_header(bytes, SAMPLES_MAGIC)?;
        let grid = read_grid(&header)?;
        let channels: usize = parse_field(&header, "channels")?;
        let count: usize = parse_field(&header, "count")?;
        let weights = match header.get("weights") {
            Some(w) => Some(parse_f64_list(w, "weights")?),
            None => None,
        };
        let per = channels * grid.len();
        let values = read_f64s(payload, count * per)?;
        let samples = values
            .chunks(per.max(1))
            .take(count)
            .map(|c| FunctionSample::new(grid.clone(), channels, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        if let Some(w) = &weights {
            if w.len() != count {
                return Err(FmfError::format("weight count does not match sample count"));
            }
        }
        Ok(Self {
            grid,
            channels,
            samples,
            weights,
            meta: collect_meta(&header),
        })
    }
}

pub fn write_samples(path: &Path, set: &SampleSet) -> Result<()> {
    write_atomic(path, &set.to_bytes())
}

pub fn read_samples(path: &Path) -> Result<SampleSet> {
    SampleSet::from_bytes(&fs::read(path)?)
}

/// Whether a checkpoint holds a healthy run or the last state before an abort.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckpointStatus {
    Complete,
    Failed(String),
}

/// Model weights plus everything needed to rebuild the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub grid: Grid,
    pub operator: OperatorConfig,
    pub seed: u64,
    pub step: usize,
    pub status: CheckpointStatus,
    pub meta: BTreeMap<String, String>,
    pub params: OperatorParams,
}

impl Checkpoint {
    /// Rebuilds the network and checks the parameter layout.
    pub fn network(&self) -> Result<NeuralOperator> {
        let net = NeuralOperator::new(self.operator.clone(), &self.grid)?;
        if net.layout().len() != self.params.len() {
            return Err(FmfError::format(format!(
                "checkpoint holds {} parameters, architecture needs {}",
                self.params.len(),
                net.layout().len()
            )));
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let op = &self.operator;
        let mut head = String::new();
        writeln!(head, "{CHECKPOINT_MAGIC}").unwrap();
        write_grid(&mut head, &self.grid);
        writeln!(head, "operator.in_channels={}", op.in_channels).unwrap();
        writeln!(head, "operator.hidden_channels={}", op.hidden_channels).unwrap();
        writeln!(head, "operator.modes={}", join_usize(&op.modes)).unwrap();
        writeln!(head, "operator.layers={}", op.layers).unwrap();
        writeln!(head, "operator.projection_channels={}", op.projection_channels).unwrap();
        writeln!(head, "operator.time_scale={:?}", op.time_scale).unwrap();
        writeln!(head, "params={}", self.params.len()).unwrap();
        writeln!(head, "seed={}", self.seed).unwrap();
        writeln!(head, "step={}", self.step).unwrap();
        match &self.status {
            CheckpointStatus::Complete => writeln!(head, "status=complete").unwrap(),
            CheckpointStatus::Failed(why) => {
                writeln!(head, "status=failed").unwrap();
                writeln!(head, "failure={}", why.replace('\n', " ")).unwrap();
            }
        }
        writeln!(head, "endian=le").unwrap();
        write_meta(&mut head, &self.meta);
        head.push('\n');
        let mut out = head.into_bytes();
        push_f64s(&mut out, self.params.values());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = split_header(bytes, CHECKPOINT_MAGIC)?;
        let grid = read_grid(&header)?;
        let operator = OperatorConfig {
            in_channels: parse_field(&header, "operator.in_channels")?,
            hidden_channels: parse_field(&header, "operator.hidden_channels")?,
            modes: parse_usize_list(field(&header, "operator.modes")?, "operator.modes")?,
            layers: parse_field(&header, "operator.layers")?,
            projection_channels: parse_field(&header, "operator.projection_channels")?,
            time_scale: parse_field(&header, "operator.time_scale")?,
        };
        let n: usize = parse_field(&header, "params")?;
        let status = match field(&header, "status")? {
            "complete" => CheckpointStatus::Complete,
            "failed" => CheckpointStatus::Failed(
                header.get("failure").cloned().unwrap_or_default(),
            ),
            other => return Err(FmfError::format(format!("unknown checkpoint status `{other}`"))),
        };
        let params = OperatorParams::from_vec(read_f64s(payload, n)?)?;
        Ok(Self {
            grid,
            operator,
            seed: parse_field(&header, "seed")?,
            step: parse_field(&header, "step")?,
            status,
            meta: collect_meta(&header),
            params,
        })
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

/// Writes through a sibling temporary file so readers never see a partial
/// artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

type Header = BTreeMap<String, String>;

fn split_header<'a>(bytes: &'a [u8], magic: &str) -> Result<(Header, &'a [u8])> {
    let end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| FmfError::format("missing header terminator"))?;
    let text = std::str::from_utf8(&bytes[..end])
        .map_err(|_| FmfError::format("header is not UTF-8"))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(m) if m == magic => {}
        Some(m) => {
            return Err(FmfError::format(format!("expected `{magic}`, found `{m}`")));
        }
        None => return Err(FmfError::format("empty header")),
    }
    let mut header = Header::new();
    for line in lines {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FmfError::format(format!("malformed header line `{line}`")))?;
        header.insert(k.to_string(), v.to_string());
    }
    if header.get("endian").map(String::as_str) != Some("le") {
        return Err(FmfError::format("only little-endian payloads are supported"));
    }
    Ok((header, &bytes[end + 2..]))
}

fn field<'h>(header: &'h Header, key: &str) -> Result<&'h str> {
    header
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| FmfError::format(format!("missing header field `{key}`")))
}

fn parse_field<T: std::str::FromStr>(header: &Header, key: &str) -> Result<T> {
    let v = field(header, key)?;
    v.parse()
        .map_err(|_| FmfError::format(format!("bad value `{v}` for `{key}`")))
}

fn parse_usize_list(v: &str, key: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| FmfError::format(format!("bad value `{v}` for `{key}`")))
        })
        .collect()
}

fn parse_f64_list(v: &str, key: &str) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| FmfError::format(format!("bad value in `{key}`")))
        })
        .collect()
}

fn join_usize(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn write_grid(head: &mut String, grid: &Grid) {
    writeln!(head, "dim={}", grid.dim()).unwrap();
    writeln!(head, "resolution={}", join_usize(grid.resolution())).unwrap();
}

fn read_grid(header: &Header) -> Result<Grid> {
    let dim: usize = parse_field(header, "dim")?;
    let res = parse_usize_list(field(header, "resolution")?, "resolution")?;
    if res.len() != dim {
        return Err(FmfError::format("resolution does not match dim"));
    }
    Grid::new(&res)
}

fn write_meta(head: &mut String, meta: &BTreeMap<String, String>) {
    for (k, v) in meta {
        writeln!(head, "meta.{k}={}", v.replace('\n', " ")).unwrap();
    }
}

fn collect_meta(header: &Header) -> BTreeMap<String, String> {
    header
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone())))
        .collect()
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f64s(payload: &[u8], n: usize) -> Result<Vec<f64>> {
    if payload.len() != n * 8 {
        return Err(FmfError::format(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            n * 8
        )));
    }
    Ok(payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}
