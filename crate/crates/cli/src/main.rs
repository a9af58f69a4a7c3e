//! Command-line front end: synthetic data, ingestion, model fitting and
//! closed-loop experiments.
//!
//! Every invocation ends with one JSON line: a summary on stdout when it
//! succeeds, or `{"status":"error",...}` on stderr with a nonzero exit code.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::{Duration, NaiveDate};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use evcs::behavior::BehaviorModel;
use evcs::data::{discretize, parse_sessions, preprocess_requests, split, write_csv, DiscretizeOptions, ParseOptions, SessionFormat, SynthConfig};
use evcs::harness::{emit_reports, run_sweep, synthetic_traces, ExperimentConfig, World, WORLD_STREAM};
use evcs::policy::PolicyKind;
use evcs::rng::stream_seed;

#[derive(Parser, Debug)]
#[command(name = "evcs", version, about = "EV charging station controllers: data, models and closed-loop experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Replace the configured seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Restrict the run to one controller.
    #[arg(long, global = true, value_parser = parse_policy)]
    policy: Option<PolicyKind>,
    /// Replace the configured alpha list with this single value.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Control horizon in steps.
    #[arg(long, global = true)]
    horizon: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic session log and its train/test traces.
    Synth,
    /// Parse a session log, place it on the step grid and split it.
    Ingest(IngestArgs),
    /// Fit the behavior model on a training trace.
    Train(TrainArgs),
    /// Run one controller at one alpha and seed.
    Simulate(SimulateArgs),
    /// Run the full policy x alpha x seed experiment.
    Sweep,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// `csv` or `acn` (ACN-style JSON export).
    #[arg(long, default_value = "csv")]
    format: String,
    /// First day of the test period; sessions connecting before it train.
    #[arg(long)]
    boundary: NaiveDate,
    /// Station local time offset from UTC, minutes.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    utc_offset_minutes: i32,
    /// Slot count; defaults to the configured station, else the distinct ids.
    #[arg(long)]
    slots: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    trace: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Evaluate on this trace instead of the configured world.
    #[arg(long, value_name = "FILE", requires = "train")]
    trace: Option<PathBuf>,
    /// Training trace that goes with `--trace`.
    #[arg(long, value_name = "FILE")]
    train: Option<PathBuf>,
    /// Fitted model to use instead of fitting on the training trace.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    s.parse().map_err(|e: evcs::policy::PolicyError| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // help and version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", &e.render().to_string(), 2),
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(kind_of(&e), &format!("{e:#}"), 1),
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let line = json!({ "status": "error", "kind": kind, "message": message.trim() });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn kind_of(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if cause.is::<std::io::Error>() {
            return "io";
        }
        if let Some(h) = cause.downcast_ref::<evcs::harness::HarnessError>() {
            return match h {
                evcs::harness::HarnessError::Config(_) => "config",
                evcs::harness::HarnessError::Io(_) => "io",
                _ => "run",
            };
        }
        if cause.is::<evcs::data::DataError>() || cause.is::<evcs::trace::TraceError>() || cause.is::<evcs::behavior::BehaviorError>() {
            return "data";
        }
    }
    "config"
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let c = &cli.common;
    match &cli.command {
        Command::Synth => synth(c),
        Command::Ingest(a) => ingest(c, a),
        Command::Train(a) => train(c, a),
        Command::Simulate(a) => simulate(c, a),
        Command::Sweep => sweep(c),
    }
}

fn load_config(c: &Common) -> Result<Option<ExperimentConfig>> {
    let Some(path) = &c.config else { return Ok(None) };
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(p) = c.policy {
        cfg.policies = vec![p];
    }
    if let Some(a) = c.alpha {
        cfg.alphas = vec![a];
    }
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(h) = c.horizon {
        cfg.station.horizon = Some(h);
    }
    cfg.validate()?;
    Ok(Some(cfg))
}

fn require_config(c: &Common, command: &str) -> Result<ExperimentConfig> {
    match load_config(c)? {
        Some(cfg) => Ok(cfg),
        None => bail!("{command} needs --config"),
    }
}

fn out_dir(c: &Common, cfg: Option<&ExperimentConfig>) -> Result<PathBuf> {
    let dir = c
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn synth(c: &Common) -> Result<serde_json::Value> {
    let cfg = load_config(c)?;
    let (generator, train_days, test_days) = match cfg.as_ref().map(|c| &c.world) {
        Some(World::Synthetic {
            generator,
            train_days,
            test_days,
        }) => (generator.clone(), *train_days, *test_days),
        Some(World::Traces { .. }) => bail!("synth needs a synthetic world in the config"),
        None => (SynthConfig::small_world(5, 35), 28, 7),
    };
    let seed = c.seed.or_else(|| cfg.as_ref().map(|c| c.seeds[0])).unwrap_or(1);
    let dir = out_dir(c, cfg.as_ref())?;
    let (train, test, truth) = synthetic_traces(&generator, train_days, test_days, seed)?;

    // the same raw draw the traces were discretized from
    let mut g = generator.clone();
    g.days = train_days + test_days;
    let (raw, _) = evcs::data::generate_synthetic(&g, stream_seed(seed, &[WORLD_STREAM]))?;
    write_csv(&raw, BufWriter::new(File::create(dir.join("sessions.csv"))?))?;
    train.save(&dir.join("train.trace"))?;
    test.save(&dir.join("test.trace"))?;
    std::fs::write(dir.join("truth.json"), serde_json::to_string_pretty(&truth)?)?;
    Ok(json!({
        "status": "ok",
        "command": "synth",
        "out": dir,
        "seed": seed,
        "sessions": raw.len(),
        "train_sessions": train.sessions.len(),
        "test_sessions": test.sessions.len(),
    }))
}

fn ingest(c: &Common, a: &IngestArgs) -> Result<serde_json::Value> {
    let cfg = load_config(c)?;
    let format: SessionFormat = a.format.parse()?;
    let opts = ParseOptions {
        utc_offset_minutes: a.utc_offset_minutes,
        ..ParseOptions::default()
    };
    let parsed = parse_sessions(&a.input, format, &opts).with_context(|| format!("parsing {}", a.input.display()))?;
    let mut ids: Vec<&str> = parsed.sessions.iter().map(|s| s.slot_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    let n = a.slots.or(cfg.as_ref().and_then(|c| c.station.n)).unwrap_or(ids.len().max(1));
    let station = match &cfg {
        Some(cfg) => {
            let mut s = cfg.station_config(cfg.alphas[0])?;
            s.n = n;
            s
        }
        None => evcs::station::StationConfig::reference(n),
    };
    let (trace, report) = discretize(
        &parsed.sessions,
        &DiscretizeOptions {
            dt_minutes: station.dt_minutes,
            n_slots: n,
            slot_names: Vec::new(),
            epoch: None,
        },
    )?;
    // pad so that the boundary day is inside the trace even without test sessions
    let last = a.boundary + Duration::days(1);
    let needed = usize::try_from(trace.clock.step_of(last.and_hms_opt(0, 0, 0).expect("midnight"))).unwrap_or(0);
    let trace = if trace.len() < needed {
        evcs::trace::DiscretizedTrace::from_sessions(trace.clock, trace.slot_names.clone(), needed, &trace.sessions)?
    } else {
        trace
    };
    let (trace, capped_out) = preprocess_requests(&trace, &station)?;
    let (train_trace, test_trace) = split(&trace, a.boundary)?;
    let dir = out_dir(c, cfg.as_ref())?;
    train_trace.save(&dir.join("train.trace"))?;
    test_trace.save(&dir.join("test.trace"))?;
    let summary = json!({
        "status": "ok",
        "command": "ingest",
        "out": dir,
        "parsed": parsed.sessions.len(),
        "rejected_rows": parsed.rejected.len(),
        "slots": trace.slot_names,
        "truncated": report.truncated,
        "dropped": report.dropped + capped_out,
        "empty": report.empty,
        "train_sessions": train_trace.sessions.len(),
        "test_sessions": test_trace.sessions.len(),
    });
    std::fs::write(
        dir.join("ingest.json"),
        serde_json::to_string_pretty(&json!({ "summary": summary, "rejected": parsed.rejected }))?,
    )?;
    Ok(summary)
}

fn train(c: &Common, a: &TrainArgs) -> Result<serde_json::Value> {
    let cfg = load_config(c)?;
    let binning = cfg.as_ref().map(|c| c.binning.clone()).unwrap_or_default();
    let trace = evcs::trace::DiscretizedTrace::load(&a.trace).with_context(|| format!("reading {}", a.trace.display()))?;
    let model = BehaviorModel::fit(&trace, &binning)?;
    let dir = out_dir(c, cfg.as_ref())?;
    let path = dir.join("model.json");
    model.save(&path)?;
    Ok(json!({
        "status": "ok",
        "command": "train",
        "model": path,
        "sessions": model.training().sessions,
        "steps": model.training().steps,
    }))
}

fn simulate(c: &Common, a: &SimulateArgs) -> Result<serde_json::Value> {
    let mut cfg = require_config(c, "simulate")?;
    if cfg.policies.len() != 1 || cfg.alphas.len() != 1 || cfg.seeds.len() != 1 {
        bail!("simulate runs one cell: pass --policy, --alpha and --seed unless the config already has exactly one of each");
    }
    if let (Some(test), Some(train)) = (&a.trace, &a.train) {
        cfg.world = World::Traces {
            train: train.clone(),
            test: test.clone(),
            model: a.model.clone(),
        };
    } else if let Some(m) = &a.model {
        match &mut cfg.world {
            World::Traces { model, .. } => *model = Some(m.clone()),
            World::Synthetic { .. } => bail!("--model needs a trace world; pass --trace and --train"),
        }
    }
    let dir = out_dir(c, Some(&cfg))?;
    let report = run_sweep(&cfg)?;
    emit_reports(&report, &dir)?;
    let cell = &report.cells[0];
    let metrics = cell.metrics.as_ref().with_context(|| cell.error.clone().unwrap_or_default())?;
    Ok(json!({
        "status": "ok",
        "command": "simulate",
        "out": dir,
        "policy": cell.policy,
        "alpha": cell.alpha,
        "seed": cell.seed,
        "metrics": metrics,
    }))
}

fn sweep(c: &Common) -> Result<serde_json::Value> {
    let cfg = require_config(c, "sweep")?;
    let dir = out_dir(c, Some(&cfg))?;
    let report = run_sweep(&cfg)?;
    emit_reports(&report, &dir)?;
    let failed: Vec<String> = report
        .cells
        .iter()
        .filter_map(|c| c.error.as_ref().map(|e| format!("{} alpha={} seed={}: {e}", c.policy, c.alpha, c.seed)))
        .collect();
    Ok(json!({
        "status": "ok",
        "command": "sweep",
        "out": dir,
        "config_sha256": report.config_hash,
        "cells": report.cells.len(),
        "failed": failed,
    }))
}
