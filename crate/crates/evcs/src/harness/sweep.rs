//! Policy x alpha x seed sweeps and the files they produce.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use chrono::Duration;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, World};
use super::{compute_metrics, simulate, HarnessError, MetricsSummary, RunResult};
use crate::behavior::{BehaviorModel, TransitionEstimator};
use crate::data::{discretize, generate_synthetic, preprocess_requests, slot_name, split, DiscretizeOptions, GroundTruth};
use crate::par::map_indexed;
use crate::policy::{build_avg_load_table, make_mpc_policy, make_pmpc_policy, make_rmpc_policy, Policy, PolicyKind, TwoStagePolicy};
use crate::rng::stream_seed;
use crate::scenario::AvgLoadTable;
use crate::trace::DiscretizedTrace;

/// Named seed streams, so the world and the controllers vary independently.
pub const WORLD_STREAM: u64 = 0x776f726c64;
pub const POLICY_STREAM: u64 = 0x706f6c696379;

/// Everything a sweep cell needs besides the policy choice and alpha.
pub struct PreparedWorld {
    pub seed: u64,
    pub train: Arc<DiscretizedTrace>,
    pub test: Arc<DiscretizedTrace>,
    pub estimator: Option<Arc<dyn TransitionEstimator>>,
    pub table: Option<AvgLoadTable>,
    pub truth: Option<GroundTruth>,
}

/// Synthetic train and test traces for one seed, discretized like real data.
pub fn synthetic_traces(
    generator: &crate::data::SynthConfig,
    train_days: usize,
    test_days: usize,
    seed: u64,
) -> Result<(DiscretizedTrace, DiscretizedTrace, GroundTruth), HarnessError> {
    let data = |e: crate::data::DataError| HarnessError::Data(e.to_string());
    let mut g = generator.clone();
    g.days = train_days + test_days;
    let (raw, truth) = generate_synthetic(&g, stream_seed(seed, &[WORLD_STREAM])).map_err(data)?;
    let opts = DiscretizeOptions {
        dt_minutes: g.dt_minutes,
        n_slots: g.n_slots,
        slot_names: (0..g.n_slots).map(slot_name).collect(),
        epoch: Some(g.start_date),
    };
    let (trace, _) = discretize(&raw, &opts).map_err(data)?;
    let steps = g.steps();
    let full = if trace.len() >= steps {
        trace
    } else {
        // pad to the generated span so the split boundary always exists
        DiscretizedTrace::from_sessions(trace.clock, trace.slot_names.clone(), steps, &trace.sessions).map_err(|e| HarnessError::Data(e.to_string()))?
    };
    let (train, test) = split(&full, g.start_date + Duration::days(train_days as i64)).map_err(data)?;
    let test = test
        .slice(0, test_days * 1440 / g.dt_minutes as usize)
        .map_err(|e| HarnessError::Data(e.to_string()))?;
    Ok((train, test, truth))
}

pub fn prepare_world(config: &ExperimentConfig, seed: u64) -> Result<PreparedWorld, HarnessError> {
    let data = |e: crate::data::DataError| HarnessError::Data(e.to_string());
    let station = config.table_station()?;
    let (train, test, truth, model_path) = match &config.world {
        World::Synthetic {
            train_days,
            test_days,
            generator,
        } => {
            if generator.n_slots != station.n {
                return Err(HarnessError::Config(format!(
                    "generator has {} slots, station has {}",
                    generator.n_slots, station.n
                )));
            }
            let (train, test, truth) = synthetic_traces(generator, *train_days, *test_days, seed)?;
            (train, test, Some(truth), None)
        }
        World::Traces { train, test, model } => {
            let load = |p: &Path| DiscretizedTrace::load(p).map_err(|e| HarnessError::Data(format!("{}: {e}", p.display())));
            (load(train)?, load(test)?, None, model.clone())
        }
    };
    let (train, _) = preprocess_requests(&train, &station).map_err(data)?;
    let (test, _) = preprocess_requests(&test, &station).map_err(data)?;
    let needs_model = config.policies.iter().any(|p| matches!(p, PolicyKind::TwoStage | PolicyKind::Mpc));
    let estimator: Option<Arc<dyn TransitionEstimator>> = if !needs_model {
        None
    } else if let Some(p) = model_path {
        Some(Arc::new(
            BehaviorModel::load(&p).map_err(|e| HarnessError::Data(format!("{}: {e}", p.display())))?,
        ))
    } else {
        Some(Arc::new(
            BehaviorModel::fit(&train, &config.binning).map_err(|e| HarnessError::Data(e.to_string()))?,
        ))
    };
    let table = if config.policies.contains(&PolicyKind::RequestMpc) {
        Some(build_avg_load_table(&train, &station, &config.solver.budget()).map_err(|e| HarnessError::Data(e.to_string()))?)
    } else {
        None
    };
    Ok(PreparedWorld {
        seed,
        train: Arc::new(train),
        test: Arc::new(test),
        estimator,
        table,
        truth,
    })
}

/// One policy/alpha/seed combination.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub policy: PolicyKind,
    pub alpha: f64,
    pub seed: u64,
    pub metrics: Option<MetricsSummary>,
    pub error: Option<String>,
    /// Relative differences to the clairvoyant controller, percent.
    pub rel_cost_pct: Option<f64>,
    pub rel_filling_pct: Option<f64>,
    pub rel_full_pct: Option<f64>,
    pub wall_s: f64,
    pub run: Option<RunResult>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub config_hash: String,
    pub cells: Vec<SweepCell>,
}

pub fn build_policy(config: &ExperimentConfig, world: &PreparedWorld, kind: PolicyKind) -> Result<Box<dyn Policy>, HarnessError> {
    let missing = |what: &str| HarnessError::Config(format!("{kind} needs {what}"));
    let budget = config.solver.budget();
    Ok(match kind {
        PolicyKind::TwoStage => Box::new(TwoStagePolicy {
            estimator: world.estimator.clone().ok_or_else(|| missing("a behavior model"))?,
            samples: config.scenarios.samples,
            reduced: config.scenarios.reduced,
            seed: stream_seed(world.seed, &[POLICY_STREAM]),
            exec: config.exec,
            budget,
        }),
        PolicyKind::Mpc => {
            let mut p = make_mpc_policy(world.estimator.clone().ok_or_else(|| missing("a behavior model"))?);
            p.budget = budget;
            Box::new(p)
        }
        PolicyKind::RequestMpc => {
            let mut p = make_rmpc_policy(world.table.clone().ok_or_else(|| missing("a load table"))?);
            p.budget = budget;
            Box::new(p)
        }
        PolicyKind::PerfectMpc => {
            let mut p = make_pmpc_policy(world.test.clone());
            p.budget = budget;
            Box::new(p)
        }
    })
}

fn relative(x: Option<f64>, reference: Option<f64>) -> Option<f64> {
    match (x, reference) {
        (Some(x), Some(r)) if r != 0.0 => Some(100.0 * (x - r) / r),
        _ => None,
    }
}

/// Run every cell of the sweep. Failures are recorded per cell.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepReport, HarnessError> {
    config.validate()?;
    let worlds = map_indexed(config.exec, config.seeds.len(), |j| prepare_world(config, config.seeds[j]));
    let mut jobs = Vec::new();
    for (j, &seed) in config.seeds.iter().enumerate() {
        for &alpha in &config.alphas {
            for &policy in &config.policies {
                jobs.push((j, seed, alpha, policy));
            }
        }
    }
    let mut cells = map_indexed(config.exec, jobs.len(), |c| {
        let (j, seed, alpha, policy) = jobs[c];
        let started = Instant::now();
        let outcome = (|| {
            let world = worlds[j].as_ref().map_err(|e| e.to_string())?;
            let station = config.station_config(alpha).map_err(|e| e.to_string())?;
            let p = build_policy(config, world, policy).map_err(|e| e.to_string())?;
            log::info!("running {policy} alpha={alpha} seed={seed}");
            simulate(&world.test, p.as_ref(), &station).map_err(|e| e.to_string())
        })();
        let wall_s = started.elapsed().as_secs_f64();
        match outcome {
            Ok(run) => SweepCell {
                policy,
                alpha,
                seed,
                metrics: Some(compute_metrics(&run)),
                error: None,
                rel_cost_pct: None,
                rel_filling_pct: None,
                rel_full_pct: None,
                wall_s,
                run: Some(run),
            },
            Err(e) => {
                log::error!("{policy} alpha={alpha} seed={seed}: {e}");
                SweepCell {
                    policy,
                    alpha,
                    seed,
                    metrics: None,
                    error: Some(e),
                    rel_cost_pct: None,
                    rel_filling_pct: None,
                    rel_full_pct: None,
                    wall_s,
                    run: None,
                }
            }
        }
    });
    let references: Vec<Option<MetricsSummary>> = cells
        .iter()
        .map(|c| {
            cells
                .iter()
                .find(|r| r.policy == PolicyKind::PerfectMpc && r.alpha == c.alpha && r.seed == c.seed)
                .and_then(|r| r.metrics.clone())
        })
        .collect();
    for (c, r) in cells.iter_mut().zip(references) {
        if let (Some(m), Some(r)) = (&c.metrics, r) {
            c.rel_cost_pct = relative(Some(m.electricity_cost_eur), Some(r.electricity_cost_eur));
            c.rel_filling_pct = relative(m.filling_rate_pct, r.filling_rate_pct);
            c.rel_full_pct = relative(m.full_satisfaction_rate_pct, r.full_satisfaction_rate_pct);
        }
    }
    Ok(SweepReport {
        config_hash: config_hash(config),
        cells,
    })
}

/// SHA-256 of the canonical serialization, so formatting and comments in the
/// source document do not matter.
pub fn config_hash(config: &ExperimentConfig) -> String {
    Sha256::digest(config.to_toml().as_bytes()).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn fixed(x: Option<f64>, digits: usize) -> String {
    x.map_or_else(|| "NA".to_string(), |v| format!("{v:.digits$}"))
}

fn seeds_label(cells: &[SweepCell]) -> String {
    let mut seeds: Vec<u64> = cells.iter().map(|c| c.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

#[derive(Serialize)]
struct StepLine<'a> {
    t: usize,
    active: usize,
    action: &'a [f64],
    load_kwh: f64,
    energy_cost_eur: f64,
    penalty_eur: f64,
    dissatisfaction: f64,
    status: Option<crate::optimizer::SolveStatus>,
    objective: f64,
    gap: f64,
    nodes: usize,
    weights: &'a [f64],
}

/// Write the sweep table (CSV and aligned text), the cost/satisfaction
/// frontier, per-run step logs and session outcomes, and a separate wall-time
/// file. Every file except the timings is a pure function of config and seeds.
pub fn emit_reports(report: &SweepReport, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let header = format!("# config_sha256={} seeds={}\n", report.config_hash, seeds_label(&report.cells));

    let mut csv = header.clone();
    csv.push_str("policy,alpha,seed,sessions,electricity_cost_eur,energy_cost_eur,penalty_eur,penalty_steps,filling_rate_pct,full_satisfaction_rate_pct,dissatisfaction,total_objective_eur,rel_cost_pct,rel_filling_pct,rel_full_pct,error\n");
    let mut txt = header.clone();
    let _ = writeln!(
        txt,
        "{:<6} {:>8} {:>6} {:>8} {:>12} {:>9} {:>9} {:>10} {:>10} {:>10}",
        "policy", "alpha", "seed", "sessions", "cost_eur", "fill_%", "full_%", "d_cost_%", "d_fill_%", "d_full_%"
    );
    let mut timings = String::from("policy,alpha,seed,wall_s,mean_solve_ms,max_solve_ms\n");
    for c in &report.cells {
        let m = c.metrics.as_ref();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.policy,
            c.alpha,
            c.seed,
            m.map_or(String::new(), |m| m.sessions.to_string()),
            opt(m.map(|m| m.electricity_cost_eur)),
            opt(m.map(|m| m.energy_cost_eur)),
            opt(m.map(|m| m.penalty_eur)),
            m.map_or(String::new(), |m| m.penalty_step_count.to_string()),
            opt(m.and_then(|m| m.filling_rate_pct)),
            opt(m.and_then(|m| m.full_satisfaction_rate_pct)),
            opt(m.map(|m| m.dissatisfaction)),
            opt(m.map(|m| m.total_objective_eur)),
            opt(c.rel_cost_pct),
            opt(c.rel_filling_pct),
            opt(c.rel_full_pct),
            c.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        );
        let _ = writeln!(
            txt,
            "{:<6} {:>8} {:>6} {:>8} {:>12} {:>9} {:>9} {:>10} {:>10} {:>10}",
            c.policy.as_str(),
            c.alpha,
            c.seed,
            m.map_or("-".into(), |m| m.sessions.to_string()),
            fixed(m.map(|m| m.electricity_cost_eur), 2),
            fixed(m.and_then(|m| m.filling_rate_pct), 1),
            fixed(m.and_then(|m| m.full_satisfaction_rate_pct), 1),
            fixed(c.rel_cost_pct, 1),
            fixed(c.rel_filling_pct, 1),
            fixed(c.rel_full_pct, 1),
        );
        let solve: Vec<f64> = c
            .run
            .iter()
            .flat_map(|r| r.steps.iter().filter(|s| s.diagnostics.status.is_some()).map(|s| s.diagnostics.solve_ms))
            .collect();
        let max = solve.iter().copied().fold(0.0, f64::max);
        let _ = writeln!(
            timings,
            "{},{},{},{:.3},{:.3},{:.3}",
            c.policy,
            c.alpha,
            c.seed,
            c.wall_s,
            m.map_or(0.0, |m| m.mean_solve_ms),
            max
        );
        if let Some(run) = &c.run {
            write_run(run, c, &report.config_hash, dir)?;
        }
    }
    fs::write(dir.join("sweep.csv"), csv)?;
    fs::write(dir.join("sweep.txt"), txt)?;
    fs::write(dir.join("frontier.csv"), frontier(report, &header))?;
    fs::write(dir.join("timings.csv"), timings)?;
    Ok(())
}

/// Seed-averaged cost against both satisfaction rates per policy and alpha.
fn frontier(report: &SweepReport, header: &str) -> String {
    let mut out = header.to_string();
    out.push_str("policy,alpha,runs,electricity_cost_eur,filling_rate_pct,full_satisfaction_rate_pct\n");
    let mut keys: Vec<(PolicyKind, f64)> = Vec::new();
    for c in &report.cells {
        if !keys.iter().any(|&(p, a)| p == c.policy && a == c.alpha) {
            keys.push((c.policy, c.alpha));
        }
    }
    for (p, a) in keys {
        let ms: Vec<&MetricsSummary> = report
            .cells
            .iter()
            .filter(|c| c.policy == p && c.alpha == a)
            .filter_map(|c| c.metrics.as_ref())
            .collect();
        let mean = |f: &dyn Fn(&MetricsSummary) -> Option<f64>| {
            let v: Vec<f64> = ms.iter().filter_map(|m| f(m)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let _ = writeln!(
            out,
            "{p},{a},{},{},{},{}",
            ms.len(),
            opt(mean(&|m| Some(m.electricity_cost_eur))),
            opt(mean(&|m| m.filling_rate_pct)),
            opt(mean(&|m| m.full_satisfaction_rate_pct)),
        );
    }
    out
}

fn write_run(run: &RunResult, c: &SweepCell, hash: &str, dir: &Path) -> Result<(), HarnessError> {
    let stem = format!("run_{}_a{}_s{}", c.policy, c.alpha, c.seed);
    let header = format!("# config_sha256={hash} seed={}\n", c.seed);
    let mut steps = header.clone();
    for s in &run.steps {
        let line = StepLine {
            t: s.t,
            active: s.active,
            action: &s.action,
            load_kwh: s.cost.load_kwh,
            energy_cost_eur: s.cost.energy_cost_eur,
            penalty_eur: s.cost.penalty_eur,
            dissatisfaction: s.cost.dissatisfaction_units,
            status: s.diagnostics.status,
            objective: s.diagnostics.objective,
            gap: s.diagnostics.gap,
            nodes: s.diagnostics.nodes,
            weights: &s.diagnostics.weights,
        };
        steps.push_str(&serde_json::to_string(&line).expect("step serializes"));
        steps.push('\n');
    }
    fs::write(dir.join(format!("{stem}_steps.jsonl")), steps)?;
    let mut sessions = header;
    sessions.push_str("slot,start_step,end_step,request_kwh,final_remaining_kwh,satisfaction,unserved_share\n");
    for s in &run.sessions {
        let _ = writeln!(
            sessions,
            "{},{},{},{},{},{},{}",
            s.slot,
            s.start_step,
            s.end_step,
            s.request_kwh,
            s.final_remaining_kwh,
            s.satisfaction,
            s.final_remaining_kwh / s.request_kwh
        );
    }
    fs::write(dir.join(format!("{stem}_sessions.csv")), sessions)?;
    Ok(())
}
