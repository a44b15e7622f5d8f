//! Command-line front end: generate, train, sample, bridge, eval, verify.

pub mod checkpoint;
pub mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::constants::BRIDGE_VAR_RANGE;
use crate::data::{generate, load_csv, save_csv, split_pair, write_atomic, DatasetName, DatasetSpec, SampleBatch};
use crate::error::{Error, Result};
use crate::lie::{make_group, GroupId, GroupParams};
use crate::metrics::{normalized_w2, W2Result};
use crate::pipeline::bridge_errors;
use crate::model::{network_score, ode_sample, train_cfm, train_score, LossKind, ScoreNetwork, TrainConfig, TrainReport};
use crate::rng::seeded;
use crate::schedule::BridgeSchedule;
use crate::sde::{bridge_sample, prior_batch, sample, SamplerConfig, StepRule, Trajectory};
use crate::verify::{run_all, Tolerances, VerifyOptions, VerifyReport};

use checkpoint::{Checkpoint, ModelKind, StoredNetwork, StoredSchedule, FORMAT_VERSION};
use config::{parse_named, Overrides, RunConfig};

/// Trajectory export is capped at this many chains without `--unsafe-large`.
pub const MAX_TRAJECTORY_CHAINS: usize = 64;

/// Environment variable selecting the worker thread count (0 = automatic).
pub const THREADS_ENV: &str = "LIE_DIFFUSE_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED_CHECK: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "lie-diffuse", version, about = "Diffusion models driven by Lie group actions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as CSV.
    Generate(GenerateArgs),
    /// Train a score or flow network and write a checkpoint.
    Train(TrainArgs),
    /// Draw samples from a checkpoint.
    Sample(SampleArgs),
    /// Train and run the angular bridge on the plane.
    Bridge(BridgeArgs),
    /// Normalized W2 of samples against a target.
    Eval(EvalArgs),
    /// Run the identity and oracle verification suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub run: Overrides,
    /// Output CSV; defaults to `<output_dir>/dataset.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct BridgeArgs {
    #[command(flatten)]
    pub run: Overrides,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Number of samples; defaults to the checkpoint's `sample.n`.
    #[arg(long)]
    pub n: Option<usize>,
    /// euler or exponential.
    #[arg(long)]
    pub rule: Option<String>,
    /// Chains whose paths are written to `<out>.trajectories.csv`.
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// Allow more than 64 trajectory chains.
    #[arg(long)]
    pub unsafe_large: bool,
    /// Source states for bridge checkpoints.
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long, default_value = "samples.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Prior samples for the normalization; drawn from `--group` when absent.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long)]
    pub seed: u64,
    /// Exit with status 1 when the normalized W2 exceeds this.
    #[arg(long)]
    pub max_normalized: Option<f64>,
    #[arg(long, default_value = "eval.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub n_points: Option<usize>,
    /// Skip the Monte-Carlo checks.
    #[arg(long)]
    pub quick: bool,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub em_steps: Option<usize>,
    /// TOML file of tolerance overrides.
    #[arg(long)]
    pub tolerances: Option<PathBuf>,
    /// Single tolerance override, `name=value`; repeatable.
    #[arg(long = "tol", value_name = "NAME=VALUE")]
    pub tol: Vec<String>,
    #[arg(long, default_value = "verify_report.json")]
    pub out: PathBuf,
}

/// Provenance written next to every output as `<file>.json`.
#[derive(Debug, Serialize)]
pub struct Sidecar<'a, T: Serialize> {
    pub command: &'a str,
    pub seed: u64,
    pub config: Option<&'a RunConfig>,
    pub details: T,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".json");
    path.with_file_name(name)
}

fn write_sidecar<T: Serialize>(path: &Path, command: &str, seed: u64, config: Option<&RunConfig>, details: T) -> Result<()> {
    write_json(&sidecar_path(path), &Sidecar { command, seed, config, details })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

/// Training rows: the configured CSV, or a generated dataset.
fn training_data(cfg: &RunConfig) -> Result<SampleBatch> {
    match &cfg.dataset.path {
        Some(p) => load_csv(p),
        None => generate(&cfg.dataset_spec()?),
    }
}

fn build_network(cfg: &RunConfig, dim_x: usize, dim_out: usize) -> Result<ScoreNetwork> {
    let seed = cfg.seed()?.wrapping_add(2);
    ScoreNetwork::new(dim_x, dim_out, &cfg.model.hidden, cfg.model.time_dim, cfg.model.activation, &mut seeded(seed))
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    Ok(TrainConfig { seed: cfg.seed()?, ..cfg.train.clone() })
}

#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    kind: ModelKind,
    checkpoint: &'a Path,
    steps: usize,
    final_loss: f64,
    head_mean: f64,
    tail_mean: f64,
    wall_time_s: f64,
    losses: &'a [f64],
}

const LOSS_WINDOW: usize = 500;

fn write_train_report(path: &Path, cfg: &RunConfig, kind: ModelKind, ck_path: &Path, report: &TrainReport) -> Result<()> {
    let summary = TrainSummary {
        kind,
        checkpoint: ck_path,
        steps: report.losses.len(),
        final_loss: report.final_loss,
        head_mean: report.head_mean(LOSS_WINDOW),
        tail_mean: report.tail_mean(LOSS_WINDOW),
        wall_time_s: report.wall_time_s,
        losses: &report.losses,
    };
    write_json(path, &Sidecar { command: "train", seed: report.seed, config: Some(cfg), details: summary })
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<PathBuf> {
    let cfg = args.run.resolve()?;
    let spec = cfg.dataset_spec()?;
    let batch = generate(&spec)?;
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir.join("dataset.csv"));
    ensure_parent(&out)?;
    save_csv(&batch, &out)?;
    write_sidecar(&out, "generate", spec.seed, Some(&cfg), &spec)?;
    Ok(out)
}

/// Trains per the resolved config; returns the checkpoint path.
pub fn cmd_train(args: &TrainArgs) -> Result<PathBuf> {
    let cfg = args.run.resolve()?;
    cfg.validate()?;
    let seed = cfg.seed()?;
    let g = cfg.build_group()?;
    let sched = cfg.build_schedule()?;
    let data = training_data(&cfg)?;
    let mut net = build_network(&cfg, g.dim_x, g.dim_g)?;
    let tc = train_config(&cfg)?;
    let (kind, report) = match tc.loss_kind {
        LossKind::ScoreMatching => (ModelKind::Score, train_score(&mut net, &g, &sched, data.x.view(), &tc)?),
        LossKind::FlowMatching => (ModelKind::Flow, train_cfm(&mut net, &g, &sched, data.x.view(), &tc)?),
    };
    ensure_dir(&cfg.output_dir)?;
    let ck_path = cfg.output_dir.join("checkpoint.json");
    let ck = Checkpoint {
        format_version: FORMAT_VERSION,
        kind,
        config: cfg.clone(),
        seed,
        schedule: StoredSchedule::from_noise(&sched),
        network: StoredNetwork::from_network(&net),
        train_steps: report.losses.len(),
    };
    ck.save(&ck_path)?;
    write_train_report(&cfg.output_dir.join("train_report.json"), &cfg, kind, &ck_path, &report)?;
    Ok(ck_path)
}

fn trajectory_csv(trajs: &[Trajectory]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(vec![]);
    let fmt_err = |e: csv::Error| Error::Format(e.to_string());
    let dim = trajs.first().map(|t| t.states.ncols()).unwrap_or(0);
    let mut header = vec!["chain".to_string(), "step".into(), "time".into(), "clamped".into()];
    header.extend((1..=dim).map(|k| format!("x{k}")));
    w.write_record(&header).map_err(fmt_err)?;
    for (c, t) in trajs.iter().enumerate() {
        for (s, row) in t.states.rows().into_iter().enumerate() {
            let mut rec = vec![c.to_string(), s.to_string(), format!("{}", t.times[s]), t.clamped.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&rec).map_err(fmt_err)?;
        }
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

#[derive(Debug, Serialize)]
struct SampleSummary<'a> {
    checkpoint: &'a Path,
    kind: ModelKind,
    rule: StepRule,
    requested: usize,
    written: usize,
    dropped: usize,
    trajectories: usize,
    clamped_trajectories: usize,
}

/// Draws samples from a checkpoint; returns the CSV path.
pub fn cmd_sample(args: &SampleArgs) -> Result<PathBuf> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let cfg = &ck.config;
    let n = args.n.unwrap_or(cfg.sample.n);
    let rule = match &args.rule {
        Some(r) => parse_named(r)?,
        None if ck.kind == ModelKind::Bridge => StepRule::Exponential,
        None => cfg.sample.rule,
    };
    let record = args.trajectories.unwrap_or(cfg.sample.trajectories);
    if record > MAX_TRAJECTORY_CHAINS && !args.unsafe_large {
        return Err(Error::TooLarge(format!(
            "{record} trajectory chains requested; the limit is {MAX_TRAJECTORY_CHAINS} without --unsafe-large"
        )));
    }
    let g = cfg.build_group()?;
    let net = ck.network.network()?;
    if net.dim_x != g.dim_x || net.dim_out() != g.dim_g {
        return Err(Error::Format("checkpoint network does not match its group".into()));
    }
    let sampler = SamplerConfig { rule, deterministic_last: cfg.sample.deterministic_last, seed: args.seed, record };
    let out = match ck.kind {
        ModelKind::Score => {
            let sched = ck.schedule.noise()?;
            let out = sample(&g, &sched, &network_score(&net, &sched), n, &sampler)?;
            out
        }
        ModelKind::Flow => ode_sample(&net, &g, n, args.seed)?,
        ModelKind::Bridge => {
            let sched = ck.schedule.bridge()?;
            let src = args
                .source
                .as_ref()
                .ok_or_else(|| Error::InvalidParams("bridge checkpoints need --source".into()))?;
            let source = load_csv(src)?;
            let out = bridge_sample(&g, &sched, &network_score(&net, &sched), source.x.view(), &sampler)?;
            out
        }
    };
    ensure_parent(&args.out)?;
    save_csv(&out.batch, &args.out)?;
    if !out.trajectories.is_empty() {
        let mut name = args.out.file_name().map(|s| s.to_os_string()).unwrap_or_default();
        name.push(".trajectories.csv");
        write_atomic(&args.out.with_file_name(name), &trajectory_csv(&out.trajectories)?)?;
    }
    let summary = SampleSummary {
        checkpoint: &args.checkpoint,
        kind: ck.kind,
        rule,
        requested: n,
        written: out.batch.len(),
        dropped: out.dropped,
        trajectories: out.trajectories.len(),
        clamped_trajectories: out.trajectories.iter().filter(|t| t.clamped).count(),
    };
    write_sidecar(&args.out, "sample", args.seed, Some(cfg), summary)?;
    Ok(args.out.clone())
}

#[derive(Debug, Serialize)]
struct BridgeSummary {
    mean_abs_angle: f64,
    max_radius_error: f64,
    dropped: usize,
    final_loss: f64,
    wall_time_s: f64,
}

/// Angular bridge from uniform-angle sources to canonical-angle targets.
/// Uses the run config for the seed, steps, rows and training settings.
pub fn cmd_bridge(args: &BridgeArgs) -> Result<BridgeSummaryOut> {
    let mut cfg = args.run.resolve()?;
    cfg.group.id = "so2rot".into();
    cfg.dataset.name = DatasetName::BridgePair;
    let seed = cfg.seed()?;
    let tc = train_config(&cfg)?;
    tc.validate()?;
    let g = make_group(GroupId::So2Rotation, GroupParams::default())?;
    let sched = BridgeSchedule::geometric(cfg.schedule.steps, BRIDGE_VAR_RANGE.0, BRIDGE_VAR_RANGE.1)?;
    let (_, target) = split_pair(&training_data(&cfg)?)?;
    let (source, _) = split_pair(&generate(&DatasetSpec::new(DatasetName::BridgePair, cfg.sample.n, seed.wrapping_add(1)))?)?;
    let mut net = build_network(&cfg, g.dim_x, g.dim_g)?;
    let report = train_score(&mut net, &g, &sched, target.x.view(), &tc)?;
    let sampler = SamplerConfig { rule: StepRule::Exponential, ..SamplerConfig::new(seed.wrapping_add(3)) };
    let out = bridge_sample(&g, &sched, &network_score(&net, &sched), source.x.view(), &sampler)?;
    let (angle, radius) = bridge_errors(&source.x, &out.batch.x, out.dropped);

    ensure_dir(&cfg.output_dir)?;
    let ck_path = cfg.output_dir.join("bridge_checkpoint.json");
    Checkpoint {
        format_version: FORMAT_VERSION,
        kind: ModelKind::Bridge,
        config: cfg.clone(),
        seed,
        schedule: StoredSchedule::from_bridge(&sched),
        network: StoredNetwork::from_network(&net),
        train_steps: report.losses.len(),
    }
    .save(&ck_path)?;
    let src_path = cfg.output_dir.join("bridge_source.csv");
    save_csv(&source, &src_path)?;
    write_sidecar(&src_path, "bridge", seed, Some(&cfg), "uniform-angle sources")?;
    let out_path = cfg.output_dir.join("transported.csv");
    save_csv(&out.batch, &out_path)?;
    let summary = BridgeSummary {
        mean_abs_angle: angle,
        max_radius_error: radius,
        dropped: out.dropped,
        final_loss: report.final_loss,
        wall_time_s: report.wall_time_s,
    };
    write_sidecar(&out_path, "bridge", seed, Some(&cfg), &summary)?;
    Ok(BridgeSummaryOut { checkpoint: ck_path, transported: out_path, mean_abs_angle: angle, max_radius_error: radius })
}

/// Paths and headline numbers of a bridge run.
#[derive(Debug, Clone)]
pub struct BridgeSummaryOut {
    pub checkpoint: PathBuf,
    pub transported: PathBuf,
    pub mean_abs_angle: f64,
    pub max_radius_error: f64,
}

#[derive(Debug, Serialize)]
struct EvalInputs<'a> {
    samples: &'a Path,
    target: &'a Path,
    prior: Option<&'a Path>,
    group: Option<&'a str>,
}

#[derive(Debug, Serialize)]
struct EvalOutput<'a> {
    #[serde(flatten)]
    result: &'a W2Result,
    seed: u64,
    inputs: EvalInputs<'a>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<W2Result> {
    let samples = load_csv(&args.samples)?;
    let target = load_csv(&args.target)?;
    let prior = match (&args.prior, &args.group) {
        (Some(p), _) => load_csv(p)?.x,
        (None, Some(id)) => {
            let g = make_group(id.parse()?, GroupParams::default())?;
            prior_batch(&g, target.len(), args.seed)?
        }
        (None, None) => return Err(Error::InvalidParams("eval needs --prior or --group".into())),
    };
    let result = normalized_w2(samples.x.view(), target.x.view(), prior.view(), args.seed)?;
    ensure_parent(&args.out)?;
    let inputs = EvalInputs { samples: &args.samples, target: &args.target, prior: args.prior.as_deref(), group: args.group.as_deref() };
    write_json(&args.out, &EvalOutput { result: &result, seed: args.seed, inputs })?;
    Ok(result)
}

/// Default tolerances, then the TOML file, then each `--tol`.
pub fn resolve_tolerances(args: &VerifyArgs) -> Result<Tolerances> {
    let defaults = toml::Table::try_from(Tolerances::default()).map_err(|e| Error::Format(e.to_string()))?;
    let mut table = defaults.clone();
    if let Some(p) = &args.tolerances {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let file: toml::Table = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        table.extend(file);
    }
    for kv in &args.tol {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::InvalidParams(format!("--tol expects NAME=VALUE, got '{kv}'")))?;
        let value: f64 = v.trim().parse().map_err(|_| Error::InvalidParams(format!("--tol {k}: '{v}' is not a number")))?;
        table.insert(k.trim().to_string(), toml::Value::Float(value));
    }
    if let Some(k) = table.keys().find(|k| !defaults.contains_key(*k)) {
        return Err(Error::InvalidParams(format!("unknown tolerance '{k}'")));
    }
    table.try_into().map_err(|e: toml::de::Error| Error::InvalidParams(e.to_string()))
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<VerifyReport> {
    let defaults = VerifyOptions::default();
    let opts = VerifyOptions {
        seed: args.seed,
        n_points: args.n_points.unwrap_or(defaults.n_points),
        stochastic: !args.quick,
        n_samples: args.n_samples.unwrap_or(defaults.n_samples),
        em_steps: args.em_steps.unwrap_or(defaults.em_steps),
        tolerances: resolve_tolerances(args)?,
        ..defaults
    };
    let report = run_all(&opts)?;
    ensure_parent(&args.out)?;
    write_json(&args.out, &report)?;
    Ok(report)
}

/// Usage errors map to 2, everything else to 3.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidParams(_) | Error::TooLarge(_) | Error::VersionMismatch { .. } => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| Error::InvalidParams(format!("{THREADS_ENV} must be a non-negative integer")))?;
    #[cfg(feature = "parallel")]
    {
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::InvalidParams(format!("{THREADS_ENV}: {e}")))?;
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

/// Runs a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|p| {
            println!("wrote {}", p.display());
            EXIT_OK
        }),
        Command::Train(a) => cmd_train(a).map(|p| {
            println!("wrote {}", p.display());
            EXIT_OK
        }),
        Command::Sample(a) => cmd_sample(a).map(|p| {
            println!("wrote {}", p.display());
            EXIT_OK
        }),
        Command::Bridge(a) => cmd_bridge(a).map(|s| {
            println!(
                "wrote {} (mean |angle| {:.4}, max radius error {:.3e})",
                s.transported.display(),
                s.mean_abs_angle,
                s.max_radius_error
            );
            EXIT_OK
        }),
        Command::Eval(a) => cmd_eval(a).map(|r| {
            println!("normalized_w2 {:.4} raw_w2 {:.4} n {}", r.normalized_w2, r.raw_w2, r.n_samples);
            match a.max_normalized {
                Some(max) if !(r.normalized_w2 <= max) => EXIT_FAILED_CHECK,
                _ => EXIT_OK,
            }
        }),
        Command::Verify(a) => cmd_verify(a).map(|r| {
            for rec in &r.records {
                let status = if rec.ok() { "ok" } else { "UNEXPECTED" };
                println!("{status:>10} {:<36} {:<16} err {:.3e} tol {:.1e}", rec.check_id, rec.group_id, rec.max_error, rec.tolerance);
            }
            if r.all_ok {
                EXIT_OK
            } else {
                EXIT_FAILED_CHECK
            }
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code(&e)
    })
}

/// Binary entry point.
pub fn main() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            }
        }
    }
}
