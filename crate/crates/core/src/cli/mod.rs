//! The `fmf` command line: `train`, `sample`, `eval` and `verify`.
//!
//! Exit codes: 0 success, 1 runtime failure (divergence, failed check, bad
//! artifact), 2 usage or configuration error.

pub mod config;
pub mod verify;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::container::{
    read_checkpoint, read_samples, write_atomic, write_checkpoint, write_samples, Checkpoint,
    CheckpointStatus, SampleSet,
};
use crate::error::{FmfError, Result};
use crate::metrics::evaluate;
use crate::rng::derive_seed;
use crate::sampler::{generate, SampleMode};
use crate::training::{train_with, write_log};

pub use config::{RunConfig, OUT_DIR_ENV};

pub const CHECKPOINT_FILE: &str = "checkpoint.fmf";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SNAPSHOT_FILE: &str = "config.resolved.toml";
const CONFIG_META_PREFIX: &str = "config.";

#[derive(Debug, Parser)]
#[command(name = "fmf", version, about = "One-step generative modeling of functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an operator network and write a checkpoint.
    Train(TrainArgs),
    /// Generate functions from a checkpoint.
    Sample(SampleArgs),
    /// Compare generated functions with reference functions.
    Eval(EvalArgs),
    /// Run numerical self-checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; falls back to $FMF_OUT_DIR, then `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Run config; defaults to the snapshot stored in the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output sample container; a `.csv` twin is written for 1D/2D grids.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mode: Option<SampleMode>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    generated: PathBuf,
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Also write the check table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Fmf(#[from] FmfError),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Fmf(FmfError::Config { .. } | FmfError::InvalidParam(_)) => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn out_dir(arg: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    arg.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| Path::new("runs").join(&cfg.name))
}

fn snapshot_meta(cfg: &RunConfig) -> BTreeMap<String, String> {
    cfg.snapshot()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (format!("{CONFIG_META_PREFIX}{k}"), v.to_string()))
        .collect()
}

/// Rebuilds the resolved config stored in a checkpoint's metadata.
pub fn config_from_checkpoint(ckpt: &Checkpoint) -> Result<RunConfig> {
    let mut text = String::new();
    for (k, v) in &ckpt.meta {
        if let Some(key) = k.strip_prefix(CONFIG_META_PREFIX) {
            writeln!(text, "{key} = {v}").unwrap();
        }
    }
    if text.is_empty() {
        return Err(FmfError::config("checkpoint", "no stored config; pass --config"));
    }
    RunConfig::from_toml(&text)
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
        cfg.train.init_seed = None;
        cfg.sample.seed = None;
    }
    let cfg = cfg.resolve()?;
    let dir = out_dir(a.out, &cfg);
    let p = cfg.prepare()?;
    let tc = cfg.train_config();
    let init = p
        .net
        .init_params(derive_seed(cfg.train.init_seed.unwrap_or(cfg.seed), 2, 0));
    let every = (tc.steps / 10).max(1);
    let outcome = train_with(&p.net, init, &tc, &p.data, &p.noise, |rec| {
        if (rec.step + 1) % every == 0 {
            eprintln!("step {:>6}  loss {:.6e}  lr {:.2e}", rec.step + 1, rec.loss, rec.lr);
        }
    })?;

    let mut log = Vec::new();
    write_log(&mut log, &outcome.log)?;
    write_atomic(&dir.join(METRICS_FILE), &log)?;
    write_atomic(&dir.join(SNAPSHOT_FILE), cfg.snapshot().as_bytes())?;
    let status = match &outcome.failure {
        None => CheckpointStatus::Complete,
        Some(why) => CheckpointStatus::Failed(why.clone()),
    };
    let ckpt = Checkpoint {
        grid: p.grid.clone(),
        operator: cfg.operator.clone(),
        seed: cfg.seed,
        step: outcome.steps_done,
        status,
        meta: snapshot_meta(&cfg),
        params: outcome.params,
    };
    write_checkpoint(&dir.join(CHECKPOINT_FILE), &ckpt)?;
    if let Some(why) = outcome.failure {
        return Err(CliError::Failed(format!("training aborted: {why}")));
    }
    println!("{}", dir.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> CliResult<()> {
    let ckpt = read_checkpoint(&a.checkpoint)?;
    if let CheckpointStatus::Failed(why) = &ckpt.status {
        return Err(CliError::Failed(format!("checkpoint is from a failed run: {why}")));
    }
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => config_from_checkpoint(&ckpt)?,
    };
    if let Some(mode) = a.mode {
        cfg.sample.mode = Some(mode);
        if a.steps.is_none() {
            cfg.sample.steps = None;
        }
    }
    if let Some(s) = a.steps {
        cfg.sample.steps = Some(s);
    }
    if let Some(c) = a.count {
        cfg.sample.count = c;
    }
    if let Some(s) = a.seed {
        cfg.sample.seed = Some(s);
    }
    let cfg = cfg.resolve()?;
    let grid = cfg.grid()?;
    if grid != ckpt.grid {
        return Err(FmfError::config(
            "grid.resolution",
            format!(
                "config grid {:?} differs from checkpoint grid {:?}",
                grid.resolution(),
                ckpt.grid.resolution()
            ),
        )
        .into());
    }
    let net = ckpt.network()?;
    let req = cfg.sample_request()?;
    let channels = ckpt.operator.in_channels;
    let generated = generate(&net.bind(&ckpt.params), &req, channels)?;

    let mut set = SampleSet::new(grid.clone(), channels, generated.samples)?;
    set.meta.insert("mode".into(), req.mode.to_string());
    set.meta.insert("steps".into(), req.steps.to_string());
    set.meta.insert("nfe".into(), generated.nfe.to_string());
    set.meta.insert("seed".into(), req.seed.to_string());
    set.meta.insert("checkpoint_step".into(), ckpt.step.to_string());
    write_samples(&a.out, &set)?;
    if grid.dim() <= 2 {
        let mut csv_path = a.out.clone().into_os_string();
        csv_path.push(".csv");
        write_atomic(Path::new(&csv_path), &samples_csv(&set)?)?;
    }
    println!("{} samples, nfe {}", set.samples.len(), generated.nfe);
    Ok(())
}

fn samples_csv(set: &SampleSet) -> Result<Vec<u8>> {
    let coords = set.grid.coords();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["sample", "channel", "x"];
    if set.grid.dim() == 2 {
        header.push("y");
    }
    header.push("value");
    w.write_record(&header).map_err(csv_err)?;
    for (i, s) in set.samples.iter().enumerate() {
        for ch in 0..s.channels() {
            for (x, v) in coords.iter().zip(s.channel(ch)) {
                let mut row = vec![i.to_string(), ch.to_string()];
                row.extend(x.iter().map(|c| format!("{c:?}")));
                row.push(format!("{v:?}"));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    }
    w.into_inner().map_err(|e| FmfError::Io(e.into_error()))
}

fn csv_err(e: csv::Error) -> FmfError {
    FmfError::Io(std::io::Error::other(e))
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let generated = read_samples(&a.generated)?;
    let reference = read_samples(&a.reference)?;
    let report = evaluate(&generated.samples, &reference.samples)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_atomic(&a.out, &buf)?;
    for (name, value) in report.rows() {
        println!("{name:<20} {value:.6e}");
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> CliResult<()> {
    let cfg = RunConfig::load(&a.config)?.resolve()?;
    let ckpt = a.checkpoint.as_deref().map(read_checkpoint).transpose()?;
    let checks = verify::run_checks(&cfg, ckpt.as_ref())?;
    let mut table = String::from("check,status,value,threshold\n");
    for c in &checks {
        writeln!(table, "{},{},{:e},{:e}", c.name, c.status(), c.value, c.threshold).unwrap();
    }
    print!("{table}");
    if let Some(out) = &a.out {
        write_atomic(out, table.as_bytes())?;
    }
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("failed checks: {}", failed.join(", "))))
    }
}
