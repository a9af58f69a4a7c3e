//! Closed-loop simulation, metrics, experiment sweeps and report files.

mod config;
mod sweep;

pub use config::{ExperimentConfig, ScenarioSettings, SolverSettings, StationSettings, World};
pub use sweep::{
    build_policy, config_hash, emit_reports, prepare_world, run_sweep, synthetic_traces, PreparedWorld, SweepCell, SweepReport, POLICY_STREAM, WORLD_STREAM,
};

use serde::{Deserialize, Serialize};

use crate::policy::{Diagnostics, Policy, PolicyContext, PolicyError, PolicyKind};
use crate::station::{step, validate_action, StageCostBreakdown, StationConfig, StationError, StationState, Violation, ENERGY_EPS};
use crate::trace::DiscretizedTrace;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("trace has {trace} slots of {trace_dt} min, station has {station} of {station_dt} min")]
    Mismatch {
        trace: usize,
        trace_dt: u32,
        station: usize,
        station_dt: u32,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("{policy} returned an infeasible action at step {t}: {}; state: {state}", list(violations))]
    Infeasible {
        policy: PolicyKind,
        t: usize,
        violations: Vec<Violation>,
        state: String,
    },
    #[error("step {t}: {source}")]
    Station { t: usize, source: StationError },
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub active: usize,
    pub action: Vec<f64>,
    pub cost: StageCostBreakdown,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub slot: usize,
    pub start_step: usize,
    /// Step of the end; the last trace step for sessions still plugged in.
    pub end_step: usize,
    pub request_kwh: f64,
    pub final_remaining_kwh: f64,
    pub satisfaction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub load_kwh: f64,
    pub energy_cost_eur: f64,
    pub penalty_eur: f64,
    pub penalty_steps: usize,
    pub dissatisfaction: f64,
    pub objective_eur: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub policy: PolicyKind,
    pub steps: Vec<StepRecord>,
    pub sessions: Vec<SessionResult>,
    pub totals: Totals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub sessions: usize,
    /// Energy cost plus overrun penalties.
    pub electricity_cost_eur: f64,
    pub energy_cost_eur: f64,
    pub penalty_eur: f64,
    pub penalty_step_count: usize,
    /// `None` when no session took place.
    pub filling_rate_pct: Option<f64>,
    pub full_satisfaction_rate_pct: Option<f64>,
    pub dissatisfaction: f64,
    /// Realized cost plus alpha times dissatisfaction.
    pub total_objective_eur: f64,
    pub mean_solve_ms: f64,
}

/// Drive `policy` through every step of `trace`. Any infeasible action aborts
/// the run with the offending state attached.
pub fn simulate(trace: &DiscretizedTrace, policy: &dyn Policy, config: &StationConfig) -> Result<RunResult, HarnessError> {
    let n = config.n;
    if trace.n_slots() != n || trace.clock.dt_minutes != config.dt_minutes {
        return Err(HarnessError::Mismatch {
            trace: trace.n_slots(),
            trace_dt: trace.clock.dt_minutes,
            station: n,
            station_dt: config.dt_minutes,
        });
    }
    config.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut state = StationState::empty(n);
    let mut started_at = vec![0usize; n];
    let mut steps = Vec::with_capacity(trace.len());
    let mut sessions = Vec::new();
    let mut totals = Totals::default();
    for w in &trace.steps {
        let t = state.t;
        let ctx = PolicyContext {
            state: &state,
            observed: w,
            clock: &trace.clock,
            config,
        };
        let decision = policy.decide(&ctx)?;
        let violations = validate_action(&state, &decision.action, config);
        if !violations.is_empty() || decision.action.energy_kwh.len() != n {
            return Err(HarnessError::Infeasible {
                policy: policy.kind(),
                t,
                violations,
                state: serde_json::to_string(&state).unwrap_or_default(),
            });
        }
        let out = step(&state, &decision.action, w, config).map_err(|source| HarnessError::Station { t, source })?;
        for e in &out.ended {
            sessions.push(SessionResult {
                slot: e.slot,
                start_step: started_at[e.slot],
                end_step: e.t,
                request_kwh: e.initial_request_kwh,
                final_remaining_kwh: e.final_remaining_kwh,
                satisfaction: e.satisfaction(),
            });
        }
        for (i, ev) in w.events.iter().enumerate() {
            if ev.start {
                started_at[i] = t;
            }
        }
        totals.load_kwh += out.cost.load_kwh;
        totals.energy_cost_eur += out.cost.energy_cost_eur;
        totals.penalty_eur += out.cost.penalty_eur;
        totals.penalty_steps += usize::from(out.cost.penalty_eur > 0.0);
        totals.dissatisfaction += out.cost.dissatisfaction_units;
        totals.objective_eur += out.cost.total_weighted_eur;
        steps.push(StepRecord {
            t,
            active: state.active_count(),
            action: decision.action.energy_kwh,
            cost: out.cost,
            diagnostics: decision.diagnostics,
        });
        state = out.state;
    }
    let last = trace.len().saturating_sub(1);
    for (i, s) in state.slots.iter().enumerate().filter(|(_, s)| s.active) {
        sessions.push(SessionResult {
            slot: i,
            start_step: started_at[i],
            end_step: last,
            request_kwh: s.initial_request_kwh,
            final_remaining_kwh: s.remaining_kwh,
            satisfaction: 1.0 - s.remaining_kwh / s.initial_request_kwh,
        });
    }
    sessions.sort_by_key(|s| (s.start_step, s.slot));
    Ok(RunResult {
        policy: policy.kind(),
        steps,
        sessions,
        totals,
    })
}

pub fn compute_metrics(run: &RunResult) -> MetricsSummary {
    let n = run.sessions.len();
    let rate = |count: f64| (n > 0).then(|| 100.0 * count / n as f64);
    let filling = rate(run.sessions.iter().map(|s| s.satisfaction).sum());
    let full = rate(run.sessions.iter().filter(|s| s.final_remaining_kwh <= ENERGY_EPS).count() as f64);
    let solved: Vec<f64> = run
        .steps
        .iter()
        .filter(|s| s.diagnostics.status.is_some())
        .map(|s| s.diagnostics.solve_ms)
        .collect();
    let mean_solve_ms = if solved.is_empty() {
        0.0
    } else {
        solved.iter().sum::<f64>() / solved.len() as f64
    };
    let t = &run.totals;
    MetricsSummary {
        sessions: n,
        electricity_cost_eur: t.energy_cost_eur + t.penalty_eur,
        energy_cost_eur: t.energy_cost_eur,
        penalty_eur: t.penalty_eur,
        penalty_step_count: t.penalty_steps,
        filling_rate_pct: filling,
        full_satisfaction_rate_pct: full,
        dissatisfaction: t.dissatisfaction,
        total_objective_eur: t.objective_eur,
        mean_solve_ms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::make_pmpc_policy;
    use crate::station::{ExogenousInput, SlotEvent};
    use crate::trace::Clock;
    use chrono::NaiveDate;
    use std::sync::Arc;

    fn clock() -> Clock {
        Clock {
            epoch: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
            dt_minutes: 15,
        }
    }

    fn trace(n: usize, events: &[(usize, usize, SlotEvent)]) -> DiscretizedTrace {
        let mut steps: Vec<ExogenousInput> = (0..96).map(|t| ExogenousInput::empty(t, n)).collect();
        for &(t, i, ev) in events {
            steps[t].events[i] = ev;
        }
        DiscretizedTrace::from_events(clock(), (0..n).map(|i| format!("s{i}")).collect(), steps).unwrap()
    }

    #[test]
    fn empty_trace_costs_nothing() {
        let tr = Arc::new(trace(2, &[]));
        let cfg = StationConfig::reference(2);
        let run = simulate(&tr, &make_pmpc_policy(tr.clone()), &cfg).unwrap();
        let m = compute_metrics(&run);
        assert_eq!(m.sessions, 0);
        assert_eq!(m.electricity_cost_eur, 0.0);
        assert_eq!(m.filling_rate_pct, None);
        assert_eq!(run.steps.len(), 96);
    }

    #[test]
    fn satisfiable_session_is_filled() {
        let tr = Arc::new(trace(1, &[(40, 0, SlotEvent::start(6.0, 8))]));
        let cfg = StationConfig::reference(1);
        let run = simulate(&tr, &make_pmpc_policy(tr.clone()), &cfg).unwrap();
        let m = compute_metrics(&run);
        assert_eq!(m.sessions, 1);
        assert_eq!(m.filling_rate_pct, Some(100.0));
        assert_eq!(m.full_satisfaction_rate_pct, Some(100.0));
        assert_eq!(run.sessions[0].start_step, 40);
        assert_eq!(run.sessions[0].end_step, 48);
        let energy: f64 = run.steps.iter().map(|s| s.cost.energy_cost_eur).sum();
        assert!((energy - run.totals.energy_cost_eur).abs() < 1e-9);
    }

    #[test]
    fn trailing_session_closes_at_last_step() {
        let tr = Arc::new(trace(1, &[(90, 0, SlotEvent::start(30.0, 20))]));
        let cfg = StationConfig::reference(1);
        let run = simulate(&tr, &make_pmpc_policy(tr.clone()), &cfg).unwrap();
        assert_eq!(run.sessions.len(), 1);
        assert_eq!(run.sessions[0].end_step, 95);
        assert!(run.sessions[0].satisfaction < 1.0);
    }

    #[test]
    fn metric_averaging() {
        let s = |chi: f64| SessionResult {
            slot: 0,
            start_step: 0,
            end_step: 1,
            request_kwh: 2.0,
            final_remaining_kwh: 2.0 * (1.0 - chi),
            satisfaction: chi,
        };
        let run = RunResult {
            policy: PolicyKind::Mpc,
            steps: vec![],
            sessions: vec![s(1.0), s(0.5)],
            totals: Totals::default(),
        };
        let m = compute_metrics(&run);
        assert_eq!(m.filling_rate_pct, Some(75.0));
        assert_eq!(m.full_satisfaction_rate_pct, Some(50.0));
    }
}
