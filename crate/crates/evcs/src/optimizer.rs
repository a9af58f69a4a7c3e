//! Deterministic-equivalent program over a weighted scenario set and its
//! solution with the embedded branch-and-bound solver.
//!
//! Charging variables exist only where a session can charge. The step-`t0`
//! variables are shared by all scenarios; later ones are duplicated per
//! scenario. Each scenario step with any active slot gets an overrun binary.

use std::io::Write;

use milp::{Budget, MilpStatus, Model, Sense, VarId};
use serde::{Deserialize, Serialize};

use crate::scenario::{PlannedSession, Scenario, ScenarioError};
use crate::station::{ControlAction, StationConfig, StationState};

/// Requests below this size carry no dissatisfaction weight.
pub const MIN_REQUEST_KWH: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum OptimizerError {
    #[error("no scenarios given")]
    NoScenarios,
    #[error("scenario weights sum to {0}, expected 1")]
    Weights(f64),
    #[error("scenario {k}: {msg}")]
    Inconsistent { k: usize, msg: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("solver: {0}")]
    Solver(#[from] milp::MilpError),
    #[error("program is infeasible")]
    Infeasible,
}

/// How the remaining-energy dynamics enter the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Remaining energy substituted out: one budget row per session.
    #[default]
    Condensed,
    /// Explicit remaining-energy variables with one propagation row per
    /// charging step.
    Full,
}

/// One charging variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    /// `None` for the shared first stage.
    pub scenario: Option<usize>,
    pub slot: usize,
    pub tau: usize,
    pub var: VarId,
}

#[derive(Debug, Clone)]
pub struct StochasticProgram {
    pub model: Model,
    pub t0: usize,
    pub horizon: usize,
    pub weights: Vec<f64>,
    pub formulation: Formulation,
    /// Step-`t0` variable of each slot active at `t0`.
    pub first_stage: Vec<Option<VarId>>,
    pub cells: Vec<Cell>,
    /// `(scenario, tau, var)` of every overrun indicator.
    pub binaries: Vec<(usize, usize, VarId)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    NodeBudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct SolverSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub gap: f64,
    pub nodes: usize,
    pub lp_iterations: usize,
}

pub fn build_program(state: &StationState, scenarios: &[Scenario], config: &StationConfig) -> Result<StochasticProgram, OptimizerError> {
    build_program_with(state, scenarios, config, Formulation::Condensed)
}

pub fn build_program_with(
    state: &StationState,
    scenarios: &[Scenario],
    config: &StationConfig,
    formulation: Formulation,
) -> Result<StochasticProgram, OptimizerError> {
    let first = scenarios.first().ok_or(OptimizerError::NoScenarios)?;
    let total: f64 = scenarios.iter().map(|s| s.weight).sum();
    if (total - 1.0).abs() > 1e-9 || scenarios.iter().any(|s| !(s.weight > 0.0)) {
        return Err(OptimizerError::Weights(total));
    }
    let horizon = first.horizon();
    let n = state.slots.len();
    let mut plans = Vec::with_capacity(scenarios.len());
    for (k, sc) in scenarios.iter().enumerate() {
        let bad = |msg: &str| OptimizerError::Inconsistent { k, msg: msg.into() };
        if sc.t0 != state.t {
            return Err(bad("starts at a different step than the state"));
        }
        if sc.horizon() != horizon || sc.uncontrollable_kwh.len() != horizon + 1 {
            return Err(bad("horizon differs from the first scenario"));
        }
        if sc.steps[0] != first.steps[0] {
            return Err(bad("observed step differs from the first scenario"));
        }
        if sc.steps.iter().any(|w| w.events.len() != n) {
            return Err(bad("slot count differs from the state"));
        }
        if sc.uncontrollable_kwh.iter().any(|u| !(u.is_finite() && *u >= 0.0)) {
            return Err(bad("uncontrollable load must be finite and nonnegative"));
        }
        plans.push(sc.sessions(state)?);
    }

    let mut model = Model::new();
    let mut first_stage = vec![None; n];
    for (i, slot) in state.slots.iter().enumerate() {
        if slot.active {
            let price = config.price_at(state.t);
            first_stage[i] = Some(model.add_var(format!("e_{i}_0"), 0.0, config.e_max, price));
        }
    }
    let mut cells: Vec<Cell> = first_stage
        .iter()
        .enumerate()
        .filter_map(|(slot, v)| {
            v.map(|var| Cell {
                scenario: None,
                slot,
                tau: 0,
                var,
            })
        })
        .collect();
    let mut binaries = Vec::new();
    let mut offset = 0.0;

    for (k, (sc, sessions)) in scenarios.iter().zip(&plans).enumerate() {
        let pi = sc.weight;
        // charging variables per step with the most each can draw
        let mut load: Vec<Vec<(VarId, f64)>> = vec![Vec::new(); horizon + 1];
        for p in sessions {
            let vars = session_vars(&mut model, &mut cells, &first_stage, state.t, k, p, pi, config)?;
            for (tau, &v) in (p.first..=p.last).zip(&vars) {
                load[tau].push((v, config.e_max.min(p.r0 / config.eta)));
            }
            offset += add_dynamics(&mut model, k, p, &vars, pi, config, formulation);
        }
        for (tau, terms) in load.into_iter().enumerate() {
            let u = sc.uncontrollable_kwh[tau];
            offset += pi * config.price_at(state.t + tau) * u;
            let reach: f64 = terms.iter().map(|t| t.1).sum();
            let big_m = reach + u - config.c_max;
            if big_m <= 0.0 {
                continue;
            }
            if terms.is_empty() {
                // overrun regardless of any decision
                offset += pi * config.xi;
                continue;
            }
            let b = model.add_binary(format!("b_{k}_{tau}"), pi * config.xi);
            binaries.push((k, tau, b));
            let mut row: Vec<(VarId, f64)> = terms.iter().map(|&(v, _)| (v, 1.0)).collect();
            row.push((b, -big_m));
            model.add_row(format!("cap_{k}_{tau}"), row, Sense::Le, config.c_max - u);
            // Without an overrun no single slot can exceed the headroom. Implied
            // by the row above for integral b, but much tighter for fractional b.
            let headroom = (config.c_max - u).max(0.0);
            for &(v, cap) in &terms {
                if headroom < cap {
                    let name = format!("slotcap_{k}_{tau}_{}", v.0);
                    model.add_row(name, vec![(v, 1.0), (b, headroom - cap)], Sense::Le, headroom);
                }
            }
        }
    }
    model.objective_offset = offset;
    Ok(StochasticProgram {
        model,
        t0: state.t,
        horizon,
        weights: scenarios.iter().map(|s| s.weight).collect(),
        formulation,
        first_stage,
        cells,
        binaries,
    })
}

/// Charging variables of one session, creating the scenario-specific ones.
#[allow(clippy::too_many_arguments)]
fn session_vars(
    model: &mut Model,
    cells: &mut Vec<Cell>,
    first_stage: &[Option<VarId>],
    t0: usize,
    k: usize,
    p: &PlannedSession,
    pi: f64,
    config: &StationConfig,
) -> Result<Vec<VarId>, OptimizerError> {
    let mut vars = Vec::with_capacity(p.last + 1 - p.first);
    for tau in p.first..=p.last {
        let var = if tau == 0 {
            first_stage[p.slot].ok_or_else(|| OptimizerError::Inconsistent {
                k,
                msg: format!("slot {} charges at t0 but the state has it inactive", p.slot),
            })?
        } else {
            let price = config.price_at(t0 + tau);
            let v = model.add_var(format!("e_{}_{}_{k}", p.slot, tau), 0.0, config.e_max, pi * price);
            cells.push(Cell {
                scenario: Some(k),
                slot: p.slot,
                tau,
                var: v,
            });
            v
        };
        vars.push(var);
    }
    Ok(vars)
}

/// Energy budget and dissatisfaction terms of one session. Returns the
/// constant part of its objective contribution.
fn add_dynamics(model: &mut Model, k: usize, p: &PlannedSession, vars: &[VarId], pi: f64, config: &StationConfig, formulation: Formulation) -> f64 {
    let eta = config.eta;
    let weight = if p.z >= MIN_REQUEST_KWH { pi * config.alpha / p.z } else { 0.0 };
    match formulation {
        Formulation::Condensed => {
            let row = vars.iter().map(|&v| (v, eta)).collect();
            model.add_row(format!("budget_{}_{}_{k}", p.slot, p.first), row, Sense::Le, p.r0);
            for (j, &v) in vars.iter().enumerate() {
                // e at this step lowers every later remaining energy in the window
                let steps_left = (vars.len() - j) as f64;
                model.vars[v.0].objective -= weight * eta * steps_left;
            }
            weight * p.r0 * vars.len() as f64
        }
        Formulation::Full => {
            let mut prev: Option<VarId> = None;
            for (tau, &e) in (p.first..).zip(vars) {
                let r = model.add_var(format!("r_{}_{}_{k}", p.slot, tau), 0.0, f64::INFINITY, weight);
                let mut row = vec![(r, 1.0), (e, eta)];
                let rhs = match prev {
                    Some(q) => {
                        row.push((q, -1.0));
                        0.0
                    }
                    None => p.r0,
                };
                model.add_row(format!("dyn_{}_{}_{k}", p.slot, tau), row, Sense::Eq, rhs);
                prev = Some(r);
            }
            0.0
        }
    }
}

pub fn solve(program: &StochasticProgram, budget: &Budget) -> Result<SolverSolution, OptimizerError> {
    let sol = milp::solve_milp(&program.model, budget)?;
    let status = match sol.status {
        MilpStatus::Optimal => SolveStatus::Optimal,
        MilpStatus::NodeBudgetExhausted => SolveStatus::NodeBudgetExhausted,
        MilpStatus::Infeasible => return Err(OptimizerError::Infeasible),
    };
    Ok(SolverSolution {
        status,
        x: sol.x,
        objective: sol.objective,
        gap: sol.gap,
        nodes: sol.nodes,
        lp_iterations: sol.lp_iterations,
    })
}

/// The shared step-`t0` decisions, clamped into the feasible set of the true
/// state so that solver dust never reaches the simulator.
pub fn extract_first_stage(solution: &SolverSolution, program: &StochasticProgram, state: &StationState, config: &StationConfig) -> ControlAction {
    let energy_kwh = state
        .slots
        .iter()
        .zip(&program.first_stage)
        .map(|(slot, var)| match var {
            Some(v) if slot.active => {
                let e = solution.x[v.0];
                if e.is_finite() {
                    e.clamp(0.0, config.e_max).min(slot.remaining_kwh / config.eta)
                } else {
                    0.0
                }
            }
            _ => 0.0,
        })
        .collect();
    ControlAction { energy_kwh }
}

/// Write the program in LP text format.
pub fn dump_lp(program: &StochasticProgram, out: &mut impl Write) -> std::io::Result<()> {
    milp::write_lp(&program.model, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::station::{ExogenousInput, PriceSchedule, SlotEvent, SlotState};

    fn config(n: usize) -> StationConfig {
        StationConfig {
            c_max: 1.0,
            ..StationConfig::reference(n)
        }
    }

    fn active(r: f64, z: f64, m: u32) -> SlotState {
        SlotState {
            active: true,
            remaining_kwh: r,
            initial_request_kwh: z,
            announced_steps_left: Some(m),
            sojourn_steps: 2,
        }
    }

    fn empty_scenario(t0: usize, n: usize, horizon: usize) -> Scenario {
        Scenario {
            t0,
            steps: (0..=horizon).map(|tau| ExogenousInput::empty(t0 + tau, n)).collect(),
            weight: 1.0,
            uncontrollable_kwh: vec![0.0; horizon + 1],
        }
    }

    #[test]
    fn single_slot_counts() {
        let mut s = StationState::empty(1);
        s.slots[0] = active(5.0, 8.0, 10);
        let sc = empty_scenario(0, 1, 2);
        let p = build_program_with(&s, std::slice::from_ref(&sc), &config(1), Formulation::Full).unwrap();
        let e = p.model.vars.iter().filter(|v| v.name.starts_with("e_")).count();
        let dynamics = p.model.rows.iter().filter(|r| r.name.starts_with("dyn_")).count();
        assert_eq!((e, p.binaries.len(), dynamics), (3, 3, 3));
        let c = build_program(&s, &[sc], &config(1)).unwrap();
        assert_eq!((c.cells.len(), c.binaries.len()), (3, 3));
    }

    #[test]
    fn first_stage_is_shared() {
        let mut s = StationState::empty(2);
        s.slots[0] = active(5.0, 8.0, 10);
        let mut a = empty_scenario(0, 2, 3);
        a.weight = 0.5;
        let b = a.clone();
        let p = build_program(&s, &[a, b], &config(2)).unwrap();
        assert_eq!(p.cells.iter().filter(|c| c.tau == 0).count(), 1);
        assert_eq!(p.cells.len(), 1 + 2 * 3);
        // the idle slot never gets a variable
        assert!(p.cells.iter().all(|c| c.slot == 0));
        assert_eq!(p.first_stage[1], None);
    }

    #[test]
    fn charge_everything_now() {
        let mut s = StationState::empty(1);
        s.slots[0] = active(3.0, 3.0, 5);
        let cfg = StationConfig {
            eta: 1.0,
            e_max: 3.0,
            c_max: 10.0,
            prices: PriceSchedule::flat(0.102),
            alpha: 1e4,
            ..StationConfig::reference(1)
        };
        let p = build_program(&s, &[empty_scenario(0, 1, 0)], &cfg).unwrap();
        let sol = solve(&p, &Budget::default()).unwrap();
        let u = extract_first_stage(&sol, &p, &s, &cfg);
        assert!((u.energy_kwh[0] - 3.0).abs() < 1e-9);
        assert!((sol.objective - 0.306).abs() < 1e-9);
    }

    #[test]
    fn formulations_agree() {
        let mut s = StationState::empty(3);
        s.t = 30;
        s.slots[0] = active(5.0, 8.0, 4);
        s.slots[2] = active(9.0, 9.0, 12);
        let mut sc = empty_scenario(30, 3, 6);
        sc.steps[2].events[1] = SlotEvent::start(6.0, 3);
        sc.steps[3].events[0] = SlotEvent::end();
        let cfg = StationConfig {
            c_max: 4.0,
            ..StationConfig::reference(3)
        };
        for alpha in [0.5, 50.0, 5000.0] {
            let cfg = StationConfig { alpha, ..cfg.clone() };
            let a = solve(&build_program(&s, &[sc.clone()], &cfg).unwrap(), &Budget::default()).unwrap();
            let full = build_program_with(&s, &[sc.clone()], &cfg, Formulation::Full).unwrap();
            let b = solve(&full, &Budget::default()).unwrap();
            assert!(
                (a.objective - b.objective).abs() < 1e-7 * a.objective.abs().max(1.0),
                "{} vs {}",
                a.objective,
                b.objective
            );
            assert!(full.model.max_violation(&b.x) <= 1e-7);
        }
    }

    #[test]
    fn unavoidable_overrun_is_a_constant() {
        let s = StationState::empty(1);
        let mut sc = empty_scenario(0, 1, 1);
        sc.uncontrollable_kwh = vec![0.0, 5.0];
        let cfg = config(1);
        let p = build_program(&s, &[sc], &cfg).unwrap();
        assert!(p.binaries.is_empty());
        let expected = cfg.xi + cfg.price_at(1) * 5.0;
        assert!((p.model.objective_offset - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_sets() {
        let s = StationState::empty(1);
        let mut a = empty_scenario(0, 1, 2);
        a.weight = 0.4;
        assert!(matches!(build_program(&s, &[a.clone()], &config(1)), Err(OptimizerError::Weights(_))));
        let mut b = empty_scenario(0, 1, 2);
        b.weight = 0.6;
        b.steps[0].events[0] = SlotEvent::end();
        assert!(matches!(build_program(&s, &[a, b], &config(1)), Err(OptimizerError::Inconsistent { k: 1, .. })));
        assert!(matches!(build_program(&s, &[], &config(1)), Err(OptimizerError::NoScenarios)));
    }

    #[test]
    fn extraction_clamps_dust() {
        let mut s = StationState::empty(2);
        s.slots[0] = active(2.0, 8.0, 10);
        let cfg = config(2);
        let p = build_program(&s, &[empty_scenario(0, 2, 1)], &cfg).unwrap();
        let mut sol = solve(&p, &Budget::default()).unwrap();
        let v = p.first_stage[0].unwrap();
        sol.x[v.0] = 2.0 / cfg.eta + 1e-10;
        let u = extract_first_stage(&sol, &p, &s, &cfg);
        assert_eq!(u.energy_kwh, vec![2.0 / cfg.eta, 0.0]);
        sol.x[v.0] = -1e-12;
        assert_eq!(extract_first_stage(&sol, &p, &s, &cfg).energy_kwh[0], 0.0);
    }
}
