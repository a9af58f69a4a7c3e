//! The four receding-horizon controllers behind one interface.

use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use milp::Budget;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::TransitionEstimator;
use crate::harness::{simulate, HarnessError};
use crate::optimizer::{build_program, extract_first_stage, solve, OptimizerError, SolveStatus};
use crate::par::Exec;
use crate::rng::stream_seed;
use crate::scenario::{perfect_forecast, point_forecast, reduce, request_based_forecast, sample_set, AvgLoadTable, Scenario};
use crate::station::{ControlAction, ExogenousInput, StationConfig, StationState};
use crate::trace::{Clock, DiscretizedTrace};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("step {t}: {source}")]
    Optimizer { t: usize, source: OptimizerError },
    #[error("step {t}: {msg}")]
    Forecast { t: usize, msg: String },
    #[error("unknown policy '{0}', expected one of 2s, mpc, rmpc, pmpc")]
    Unknown(String),
    #[error("cannot build the load table: {0}")]
    Table(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "2s")]
    TwoStage,
    #[serde(rename = "mpc")]
    Mpc,
    #[serde(rename = "rmpc")]
    RequestMpc,
    #[serde(rename = "pmpc")]
    PerfectMpc,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [Self::TwoStage, Self::Mpc, Self::RequestMpc, Self::PerfectMpc];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::TwoStage => "2s",
            Self::Mpc => "mpc",
            Self::RequestMpc => "rmpc",
            Self::PerfectMpc => "pmpc",
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| PolicyError::Unknown(s.to_string()))
    }
}

/// What a policy sees at step `state.t`.
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub state: &'a StationState,
    pub observed: &'a ExogenousInput,
    pub clock: &'a Clock,
    pub config: &'a StationConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `None` when nothing was active and no program was solved.
    pub status: Option<SolveStatus>,
    pub objective: f64,
    pub gap: f64,
    pub nodes: usize,
    pub binaries: usize,
    pub weights: Vec<f64>,
    pub solve_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: ControlAction,
    pub diagnostics: Diagnostics,
}

pub trait Policy: Send + Sync {
    fn kind(&self) -> PolicyKind;
    fn decide(&self, ctx: &PolicyContext<'_>) -> Result<Decision, PolicyError>;
}

fn plan(ctx: &PolicyContext<'_>, scenarios: &[Scenario], budget: &Budget, started: Instant) -> Result<Decision, PolicyError> {
    let t = ctx.state.t;
    let wrap = |source| PolicyError::Optimizer { t, source };
    let program = build_program(ctx.state, scenarios, ctx.config).map_err(wrap)?;
    let sol = solve(&program, budget).map_err(wrap)?;
    let action = extract_first_stage(&sol, &program, ctx.state, ctx.config);
    Ok(Decision {
        action,
        diagnostics: Diagnostics {
            status: Some(sol.status),
            objective: sol.objective,
            gap: sol.gap,
            nodes: sol.nodes,
            binaries: program.binaries.len(),
            weights: program.weights,
            solve_ms: started.elapsed().as_secs_f64() * 1e3,
        },
    })
}

/// With nothing plugged in there is nothing to decide.
fn idle(ctx: &PolicyContext<'_>) -> Option<Decision> {
    (ctx.state.active_count() == 0).then(|| Decision {
        action: ControlAction::zeros(ctx.state.slots.len()),
        diagnostics: Diagnostics::default(),
    })
}

/// Two-stage stochastic program over `reduced` representatives of `samples`
/// sampled scenarios.
pub struct TwoStagePolicy {
    pub estimator: Arc<dyn TransitionEstimator>,
    pub samples: usize,
    pub reduced: usize,
    pub seed: u64,
    pub exec: Exec,
    pub budget: Budget,
}

impl Policy for TwoStagePolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::TwoStage
    }

    fn decide(&self, ctx: &PolicyContext<'_>) -> Result<Decision, PolicyError> {
        if let Some(d) = idle(ctx) {
            return Ok(d);
        }
        let started = Instant::now();
        let t = ctx.state.t;
        let set = sample_set(
            ctx.state,
            ctx.observed,
            self.estimator.as_ref(),
            ctx.clock,
            ctx.config.horizon,
            self.samples,
            self.seed,
            self.exec,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, &[t as u64, 0x6b6d]));
        let red = reduce(&set, self.reduced, ctx.state, &mut rng).map_err(|e| PolicyError::Forecast { t, msg: e.to_string() })?;
        plan(ctx, &red.scenarios, &self.budget, started)
    }
}

/// Single scenario from the median switching times.
pub struct MpcPolicy {
    pub estimator: Arc<dyn TransitionEstimator>,
    pub budget: Budget,
}

impl Policy for MpcPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Mpc
    }

    fn decide(&self, ctx: &PolicyContext<'_>) -> Result<Decision, PolicyError> {
        if let Some(d) = idle(ctx) {
            return Ok(d);
        }
        let started = Instant::now();
        let sc = point_forecast(ctx.state, ctx.observed, self.estimator.as_ref(), ctx.clock, ctx.config.horizon);
        plan(ctx, &[sc], &self.budget, started)
    }
}

/// Trusts announced departures and reserves the average load of idle slots.
pub struct RequestMpcPolicy {
    pub table: AvgLoadTable,
    pub budget: Budget,
}

impl Policy for RequestMpcPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::RequestMpc
    }

    fn decide(&self, ctx: &PolicyContext<'_>) -> Result<Decision, PolicyError> {
        if let Some(d) = idle(ctx) {
            return Ok(d);
        }
        let started = Instant::now();
        let (sc, _) = request_based_forecast(ctx.state, ctx.observed, &self.table, ctx.clock, ctx.config.horizon);
        plan(ctx, &[sc], &self.budget, started)
    }
}

/// Clairvoyant reference: plans against the realized future.
pub struct PerfectMpcPolicy {
    pub trace: Arc<DiscretizedTrace>,
    pub budget: Budget,
}

impl Policy for PerfectMpcPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::PerfectMpc
    }

    fn decide(&self, ctx: &PolicyContext<'_>) -> Result<Decision, PolicyError> {
        if let Some(d) = idle(ctx) {
            return Ok(d);
        }
        let started = Instant::now();
        let t = ctx.state.t;
        let sc = perfect_forecast(&self.trace, t, ctx.config.horizon).map_err(|e| PolicyError::Forecast { t, msg: e.to_string() })?;
        if sc.steps[0] != *ctx.observed {
            return Err(PolicyError::Forecast {
                t,
                msg: "observed input differs from the trace".into(),
            });
        }
        plan(ctx, &[sc], &self.budget, started)
    }
}

pub fn make_2s_policy(estimator: Arc<dyn TransitionEstimator>, samples: usize, reduced: usize, seed: u64) -> TwoStagePolicy {
    TwoStagePolicy {
        estimator,
        samples,
        reduced,
        seed,
        exec: Exec::default(),
        budget: Budget::default(),
    }
}

pub fn make_mpc_policy(estimator: Arc<dyn TransitionEstimator>) -> MpcPolicy {
    MpcPolicy {
        estimator,
        budget: Budget::default(),
    }
}

pub fn make_rmpc_policy(table: AvgLoadTable) -> RequestMpcPolicy {
    RequestMpcPolicy {
        table,
        budget: Budget::default(),
    }
}

pub fn make_pmpc_policy(trace: Arc<DiscretizedTrace>) -> PerfectMpcPolicy {
    PerfectMpcPolicy {
        trace,
        budget: Budget::default(),
    }
}

/// Run P-MPC over `trace` and average the energy each slot drew per step by
/// hour of day, over all steps including idle ones.
pub fn build_avg_load_table(trace: &DiscretizedTrace, config: &StationConfig, budget: &Budget) -> Result<AvgLoadTable, PolicyError> {
    if trace.is_empty() {
        return Err(PolicyError::Table("training trace has no steps".into()));
    }
    let n = trace.n_slots();
    if n != config.n {
        return Err(PolicyError::Table(format!("trace has {n} slots, station has {}", config.n)));
    }
    let shared = Arc::new(trace.clone());
    let policy = PerfectMpcPolicy {
        trace: shared.clone(),
        budget: *budget,
    };
    let run = simulate(&shared, &policy, config).map_err(|e: HarnessError| PolicyError::Table(e.to_string()))?;
    Ok(average_by_hour(trace, run.steps.iter().map(|s| s.action.as_slice())))
}

/// Mean of per-step, per-slot energies grouped by `(slot, hour)`.
pub fn average_by_hour<'a>(trace: &DiscretizedTrace, actions: impl Iterator<Item = &'a [f64]>) -> AvgLoadTable {
    let n = trace.n_slots();
    let mut sum = vec![[0.0; 24]; n];
    let mut count = [0usize; 24];
    for (t, a) in actions.enumerate() {
        let h = trace.clock.hour(t) as usize;
        count[h] += 1;
        for (i, e) in a.iter().enumerate() {
            sum[i][h] += e;
        }
    }
    for row in &mut sum {
        for (h, v) in row.iter_mut().enumerate() {
            if count[h] > 0 {
                *v /= count[h] as f64;
            }
        }
    }
    AvgLoadTable { kwh: sum }
}
