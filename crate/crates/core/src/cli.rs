//! Command-line front end.
//!
//! Every subcommand takes an optional JSON config plus `--dotted.key value`
//! overrides, writes the effective config to `config.resolved.json` in the
//! output directory and keeps all of its artifacts there.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::BaselineConfig;
use crate::collect::{collect_iteration, train_loop, LoopConfig, COLLECT_STREAM, EVAL_STREAM, INIT_STREAM};
use crate::envs::{EnvKind, EnvParams, Expert, ExpertConfig};
use crate::error::{Error, Result};
use crate::eval::{
    baseline_candidates, default_grid, job_seed, run_method, run_sweep, Axis, EvalSeeds, GridPoint, Method,
    MethodConfig, References,
};
use crate::invdyn::{write_samples, InverseModel};
use crate::rng::RngStream;
use crate::transfer::TransferPolicy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOptions {
    pub axis: Axis,
    /// Explicit grid; empty means the standard grid for `axis`.
    pub grid: Vec<GridPoint>,
    pub seeds: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            axis: Axis::Tilt,
            grid: Vec::new(),
            seeds: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub env: EnvKind,
    pub source: EnvParams,
    pub target: EnvParams,
    pub method: Method,
    pub expert: ExpertConfig,
    pub baseline: BaselineConfig,
    pub oec_gammas: Vec<f64>,
    pub gda_forgets: Vec<f64>,
    #[serde(rename = "loop")]
    pub learn: LoopConfig,
    pub sweep: SweepOptions,
    /// Inverse-model checkpoint for `collect` and `eval`; defaults to
    /// `model.json` in the output directory.
    pub model: Option<PathBuf>,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn for_env(env: EnvKind) -> Self {
        let methods = MethodConfig::default();
        Self {
            seed: 0,
            env,
            source: EnvParams::for_kind(env),
            target: EnvParams::for_kind(env),
            method: Method::OursCorrectionHistory,
            expert: methods.expert,
            baseline: methods.baseline,
            oec_gammas: methods.oec_gammas,
            gda_forgets: methods.gda_forgets,
            learn: methods.learn,
            sweep: SweepOptions::default(),
            model: None,
            out: PathBuf::from("out"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate().map_err(|e| prefixed("source", e))?;
        self.target.validate().map_err(|e| prefixed("target", e))?;
        for (name, p) in [("source", &self.source), ("target", &self.target)] {
            if p.kind != self.env {
                return Err(Error::Config(format!(
                    "`{name}.kind` is `{}` but `env` is `{}`",
                    p.kind.name(),
                    self.env.name()
                )));
            }
        }
        self.expert.ilqr.validate().map_err(|e| prefixed("expert.ilqr", e))?;
        self.baseline.validate().map_err(|e| prefixed("baseline", e))?;
        self.learn.collect.validate().map_err(|e| prefixed("loop.collect", e))?;
        self.learn.train.validate().map_err(|e| prefixed("loop.train", e))?;
        if self.sweep.seeds == 0 {
            return Err(Error::Config("`sweep.seeds` must be >= 1".into()));
        }
        Ok(())
    }

    pub fn methods(&self) -> MethodConfig {
        MethodConfig {
            expert: self.expert.clone(),
            baseline: self.baseline.clone(),
            oec_gammas: self.oec_gammas.clone(),
            gda_forgets: self.gda_forgets.clone(),
            learn: self.learn.clone(),
        }
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out.join("model.json"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::InvalidParam { name, reason } => Error::InvalidParam {
            name: format!("{prefix}.{name}"),
            reason,
        },
        other => other,
    }
}

/// Merge `patch` into `base`, refusing keys `base` does not have.
fn merge(base: &mut Value, patch: &Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let slot = b.get_mut(k).ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
                // Objects merge field by field; anything else replaces.
                if slot.is_object() && v.is_object() {
                    merge(slot, v, &key)?;
                } else {
                    *slot = v.clone();
                }
            }
            Ok(())
        }
        (b, p) => {
            *b = p.clone();
            Ok(())
        }
    }
}

/// Interpret a flag value according to the type already present at `key`.
fn typed_value(existing: &Value, key: &str, raw: &str) -> Result<Value> {
    let mismatch = |expected: &str| Error::Config(format!("type mismatch for `{key}`: expected {expected}, got `{raw}`"));
    match existing {
        Value::Bool(_) => raw.parse::<bool>().map(Value::Bool).map_err(|_| mismatch("a boolean")),
        Value::Number(_) => {
            let v: Value = serde_json::from_str(raw).map_err(|_| mismatch("a number"))?;
            if v.is_number() {
                Ok(v)
            } else {
                Err(mismatch("a number"))
            }
        }
        Value::String(_) => Ok(Value::String(raw.to_string())),
        // Optional fields and compound values take JSON, or a bare string.
        Value::Null => Ok(serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))),
        Value::Array(_) | Value::Object(_) => serde_json::from_str(raw).map_err(|_| mismatch("JSON")),
    }
}

fn set_path(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let mut slot = &mut *root;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
    }
    let v = typed_value(slot, key, raw)?;
    *slot = v;
    Ok(())
}

/// Parse `--key value` pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected `--key value`, got `{flag}`")))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            continue;
        }
        let value = it
            .next()
            .ok_or_else(|| Error::Config(format!("missing value for `--{key}`")))?;
        out.push((key.to_string(), value.clone()));
    }
    Ok(out)
}

/// Defaults, then the config file, then flag overrides; then validation.
pub fn parse_config(file: Option<&Value>, overrides: &[(String, String)]) -> Result<RunConfig> {
    // The environment decides the parameter defaults, so resolve it first.
    let mut env = EnvKind::Reacher2;
    if let Some(Value::String(s)) = file.and_then(|f| f.get("env")) {
        env = s.parse()?;
    }
    if let Some((_, v)) = overrides.iter().rev().find(|(k, _)| k == "env") {
        env = v.parse()?;
    }
    let mut root = serde_json::to_value(RunConfig::for_env(env))?;
    if let Some(f) = file {
        if !f.is_object() {
            return Err(Error::Config("config file must hold a JSON object".into()));
        }
        merge(&mut root, f, "")?;
    }
    for (k, v) in overrides {
        set_path(&mut root, k, v)?;
    }
    let cfg: RunConfig = serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let file = match path {
        Some(p) => Some(
            serde_json::from_reader(BufReader::new(File::open(p)?))
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        ),
        None => None,
    };
    parse_config(file.as_ref(), overrides)
}

#[derive(Debug, Parser)]
#[command(name = "simxfer", version, about = "Policy transfer through a learned inverse dynamics model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long)]
    verbose: bool,
    /// Field overrides, `--dotted.key value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0.., value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the source expert and cache its reference returns.
    Expert(Common),
    /// Run one collection pass with the current inverse model.
    Collect(Common),
    /// Alternate collection and training; writes the model and curve.
    Train(Common),
    /// Evaluate a trained transfer policy on the target.
    Eval(Common),
    /// Run a perturbation sweep for one method.
    Sweep(Common),
    /// Evaluate an adaptive-MPC baseline over its hyperparameter grid.
    Baseline(Common),
}

struct StderrLogger;

impl log::Log for StderrLogger {
    fn enabled(&self, _: &log::Metadata) -> bool {
        true
    }
    fn log(&self, record: &log::Record) {
        eprintln!("[{}] {}", record.level(), record.args());
    }
    fn flush(&self) {}
}

static LOGGER: StderrLogger = StderrLogger;

/// Parse arguments, run, and map the outcome to an exit code: 0 success,
/// 1 invalid input, 2 runtime failure.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (common, run): (&Common, fn(&RunConfig) -> Result<()>) = match &cli.command {
        Command::Expert(c) => (c, cmd_expert),
        Command::Collect(c) => (c, cmd_collect),
        Command::Train(c) => (c, cmd_train),
        Command::Eval(c) => (c, cmd_eval),
        Command::Sweep(c) => (c, cmd_sweep),
        Command::Baseline(c) => (c, cmd_baseline),
    };
    if common.verbose && log::set_logger(&LOGGER).is_ok() {
        log::set_max_level(log::LevelFilter::Info);
    }
    let cfg = match parse_overrides(&common.overrides).and_then(|o| load_config(common.config.as_deref(), &o)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match write_resolved(&cfg).and_then(|_| run(&cfg)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidParam { .. } => 1,
                _ => 2,
            }
        }
    }
}

fn write_resolved(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out)?;
    let mut f = File::create(cfg.out.join("config.resolved.json"))?;
    f.write_all(cfg.to_json()?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

fn csv_writer(cfg: &RunConfig, name: &str) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_path(cfg.out.join(name))?)
}

fn write_json<T: Serialize>(cfg: &RunConfig, name: &str, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(cfg.out.join(name))?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn eval_seeds(cfg: &RunConfig) -> EvalSeeds {
    EvalSeeds::new(cfg.seed, EVAL_STREAM, cfg.learn.collect.eval_episodes)
}

fn cmd_expert(cfg: &RunConfig) -> Result<()> {
    let expert = Expert::for_source(&cfg.source, &cfg.expert);
    let seeds = eval_seeds(cfg);
    let refs = References::compute(&cfg.source, &expert, &seeds)?;
    write_json(cfg, "references.json", &refs)?;
    let mut w = csv_writer(cfg, "expert.csv")?;
    w.write_record(["episode", "env", "return", "score"])?;
    for (name, p) in [("source", &cfg.source), ("target", &cfg.target)] {
        for (j, r) in seeds.returns(p, &mut expert.clone())?.into_iter().enumerate() {
            w.serialize((j, name, r, refs.score(r)?))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn load_model(cfg: &RunConfig) -> Result<InverseModel> {
    let path = cfg.model_path();
    let model = InverseModel::load_json(BufReader::new(File::open(&path).map_err(|e| {
        Error::Config(format!("cannot open model `{}`: {e}", path.display()))
    })?))?;
    Ok(model)
}

/// One collection pass. Uses the checkpoint when one exists, otherwise an
/// untrained model (which reproduces the expert in correction mode).
fn cmd_collect(cfg: &RunConfig) -> Result<()> {
    let expert = Expert::for_source(&cfg.source, &cfg.expert);
    let refs = References::compute(&cfg.source, &expert, &eval_seeds(cfg))?;
    let model = if cfg.model.is_some() || cfg.model_path().exists() {
        load_model(cfg)?
    } else {
        InverseModel::untrained(
            cfg.learn.mode,
            cfg.learn.window,
            cfg.source.obs_dim(),
            cfg.source.act_dim(),
            &cfg.learn.train.hidden,
            &mut RngStream::new(cfg.seed, INIT_STREAM),
        )?
    };
    let mode = model.mode;
    let mut tp = TransferPolicy::new(expert.clone(), &cfg.source, model)?;
    let out = collect_iteration(
        &cfg.source,
        &cfg.target,
        &mut tp,
        &mut expert.clone(),
        &refs.obs_scale,
        &cfg.learn.collect,
        &RngStream::new(cfg.seed, COLLECT_STREAM),
    )?;
    let samples: Vec<_> = out.steps.iter().map(|s| s.to_sample(mode)).collect();
    write_samples(BufWriter::new(File::create(cfg.out.join("samples.jsonl"))?), &samples)?;
    let mut w = csv_writer(cfg, "episodes.csv")?;
    w.write_record(["episode", "steps", "reset", "unstable", "median_gap"])?;
    for (j, e) in out.episodes.iter().enumerate() {
        w.serialize((j, e.steps, e.reset, e.unstable, e.median_gap))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let expert = Expert::for_source(&cfg.source, &cfg.expert);
    let mut w = csv_writer(cfg, "curve.csv")?;
    w.write_record([
        "iteration",
        "samples",
        "score",
        "mean_return",
        "episodes",
        "resets",
        "mean_episode_len",
        "median_gap",
        "saturated_fraction",
        "train_mse",
        "val_mse",
    ])?;
    let out = train_loop(&cfg.source, &cfg.target, &expert, &cfg.learn, cfg.seed, |_, r| {
        w.serialize((
            r.iteration,
            r.samples,
            r.score,
            r.mean_return,
            r.episodes,
            r.resets,
            r.mean_episode_len,
            r.median_gap,
            r.saturated_fraction,
            r.train.train_mse,
            r.train.val_mse,
        ))?;
        w.flush()?;
        Ok(())
    })?;
    out.model.save_json(BufWriter::new(File::create(cfg.out.join("model.json"))?))?;
    write_json(cfg, "references.json", &out.references)?;
    write_json(cfg, "records.json", &out.records)?;
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let expert = Expert::for_source(&cfg.source, &cfg.expert);
    let seeds = eval_seeds(cfg);
    let refs = References::compute(&cfg.source, &expert, &seeds)?;
    let model = load_model(cfg)?;
    let mut tp = TransferPolicy::new(expert, &cfg.source, model)?;
    let mut w = csv_writer(cfg, "eval.csv")?;
    w.write_record(["episode", "return", "score"])?;
    for (j, r) in seeds.returns(&cfg.target, &mut tp)?.into_iter().enumerate() {
        w.serialize((j, r, refs.score(r)?))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    let grid = if cfg.sweep.grid.is_empty() {
        default_grid(cfg.sweep.axis)
    } else {
        cfg.sweep.grid.clone()
    };
    let spec = crate::eval::SweepSpec {
        env: cfg.env,
        method: cfg.method,
        grid,
        seeds: cfg.sweep.seeds,
    };
    let mut w = csv_writer(cfg, "sweep.csv")?;
    w.write_record(["env", "method", "axis", "value", "seed", "score", "samples_to_75"])?;
    let summary = run_sweep(&spec, &cfg.source, &cfg.methods(), cfg.seed, |row| {
        w.serialize((
            &row.env,
            &row.method,
            &row.axis,
            &row.value,
            row.seed,
            row.score,
            row.samples_to_75,
        ))?;
        w.flush()?;
        Ok(())
    })?;
    write_json(cfg, "sweep_summary.json", &summary)
}

fn cmd_baseline(cfg: &RunConfig) -> Result<()> {
    if !matches!(cfg.method, Method::Oec | Method::Gda) {
        return Err(Error::Config(format!(
            "`baseline` needs method `oec` or `gda`, got `{}`",
            cfg.method
        )));
    }
    let methods = cfg.methods();
    let mut w = csv_writer(cfg, "baseline.csv")?;
    w.write_record(["method", "gamma", "forget", "seed", "score"])?;
    for cand in baseline_candidates(cfg.method, &methods) {
        for j in 0..cfg.sweep.seeds {
            let seed = job_seed(cfg.seed, j);
            let r = run_method(cfg.method, &cfg.source, &cfg.target, &methods, &cand, seed)?;
            w.serialize((cfg.method.name(), cand.gamma, cand.forget, seed, r.score))?;
            w.flush()?;
        }
    }
    Ok(())
}
