//! Station physics and economics: state, exogenous events, the transition
//! function and the stage cost.

use serde::{Deserialize, Serialize};

/// Remaining energies below this are treated as fully served.
pub const ENERGY_EPS: f64 = 1e-6;
/// Slack allowed when checking `eta * e <= r` and `e <= e_max`.
pub const ACTION_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StationError {
    #[error("invalid station config: {0}")]
    Config(String),
    #[error("expected {expected} slots, got {got}")]
    Length { expected: usize, got: usize },
    #[error("input is for step {input} but the state is at step {state}")]
    StepMismatch { state: usize, input: usize },
    #[error("infeasible action at step {t}: {violations:?}")]
    Infeasible { t: usize, violations: Vec<Violation> },
    #[error("session start on already active slot {slot} at step {t}")]
    StartOnActive { slot: usize, t: usize },
    #[error("malformed start on slot {slot} at step {t}: k={k}, delta={delta}")]
    BadStart { slot: usize, t: usize, k: f64, delta: u32 },
    #[error("satisfaction is undefined for slot without an active request")]
    Domain,
}

/// Electricity price by hour of day, EUR/kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSchedule {
    pub hourly: Vec<f64>,
}

impl PriceSchedule {
    pub fn flat(price: f64) -> Self {
        Self { hourly: vec![price; 24] }
    }

    /// Two-tier tariff with `peak` during the given `[from, to)` hour windows.
    pub fn two_tier(off_peak: f64, peak: f64, windows: &[(usize, usize)]) -> Self {
        let mut hourly = vec![off_peak; 24];
        for &(from, to) in windows {
            for h in hourly.iter_mut().take(to.min(24)).skip(from) {
                *h = peak;
            }
        }
        Self { hourly }
    }

    /// 0.153 during 06-09, 11-13 and 17-21, 0.102 otherwise.
    pub fn reference() -> Self {
        Self::two_tier(0.102, 0.153, &[(6, 9), (11, 13), (17, 21)])
    }

    pub fn price_at_hour(&self, hour: usize) -> f64 {
        self.hourly[hour % 24]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationConfig {
    pub n: usize,
    pub dt_minutes: u32,
    /// Max energy one slot can deliver in one step, kWh.
    pub e_max: f64,
    /// Grid import threshold per step, kWh.
    pub c_max: f64,
    /// Penalty for each step above `c_max`, EUR.
    pub xi: f64,
    pub eta: f64,
    /// Monetary weight of one unit of dissatisfaction per step, EUR.
    pub alpha: f64,
    pub prices: PriceSchedule,
    pub horizon: usize,
}

impl StationConfig {
    /// Parameters of the 32-slot reference station, scaled to `n` slots.
    /// The threshold stays at 8% of nominal capacity.
    pub fn reference(n: usize) -> Self {
        let e_max = 3.0;
        Self {
            n,
            dt_minutes: 15,
            e_max,
            c_max: 0.08 * n as f64 * e_max,
            xi: 14.31,
            eta: 0.91,
            alpha: 5000.0,
            prices: PriceSchedule::reference(),
            horizon: 40,
        }
    }

    pub fn validate(&self) -> Result<(), StationError> {
        let fail = |m: &str| Err(StationError::Config(m.to_string()));
        if self.n == 0 {
            return fail("n must be at least 1");
        }
        if self.dt_minutes == 0 || 60 % self.dt_minutes != 0 {
            return fail("dt_minutes must divide 60");
        }
        if !(self.e_max > 0.0 && self.e_max.is_finite()) {
            return fail("e_max must be positive");
        }
        if !(self.c_max > 0.0 && self.c_max.is_finite()) {
            return fail("c_max must be positive");
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return fail("eta must lie in (0, 1]");
        }
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return fail("xi must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail("alpha must be positive");
        }
        if self.prices.hourly.len() != 24 || self.prices.hourly.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return fail("prices must be 24 nonnegative hourly values");
        }
        if self.horizon == 0 {
            return fail("horizon must be at least 1");
        }
        Ok(())
    }

    pub fn steps_per_day(&self) -> usize {
        (1440 / self.dt_minutes) as usize
    }

    /// Hour of day of absolute step `t`; step 0 is midnight.
    pub fn hour_of(&self, t: usize) -> usize {
        (t % self.steps_per_day()) * self.dt_minutes as usize / 60
    }

    pub fn price_at(&self, t: usize) -> f64 {
        self.prices.price_at_hour(self.hour_of(t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SlotState {
    pub active: bool,
    pub remaining_kwh: f64,
    pub initial_request_kwh: f64,
    /// Chargeable steps left before the announced end, counting the current one.
    pub announced_steps_left: Option<u32>,
    pub sojourn_steps: u32,
}

impl SlotState {
    pub fn satisfaction(&self) -> Result<f64, StationError> {
        satisfaction(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationState {
    pub t: usize,
    pub slots: Vec<SlotState>,
}

impl StationState {
    pub fn empty(n: usize) -> Self {
        Self {
            t: 0,
            slots: vec![SlotState::default(); n],
        }
    }

    pub fn active_count(&self) -> usize {
        self.slots.iter().filter(|s| s.active).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SlotEvent {
    pub start: bool,
    pub end: bool,
    pub request_kwh: f64,
    pub announced_duration_steps: u32,
}

impl SlotEvent {
    pub fn start(request_kwh: f64, announced_duration_steps: u32) -> Self {
        Self {
            start: true,
            end: false,
            request_kwh,
            announced_duration_steps,
        }
    }

    pub fn end() -> Self {
        Self { end: true, ..Self::default() }
    }

    pub fn is_empty(&self) -> bool {
        !self.start && !self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogenousInput {
    pub t: usize,
    pub events: Vec<SlotEvent>,
}

impl ExogenousInput {
    pub fn empty(t: usize, n: usize) -> Self {
        Self {
            t,
            events: vec![SlotEvent::default(); n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub energy_kwh: Vec<f64>,
}

impl ControlAction {
    pub fn zeros(n: usize) -> Self {
        Self { energy_kwh: vec![0.0; n] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageCostBreakdown {
    pub load_kwh: f64,
    pub energy_cost_eur: f64,
    pub penalty_eur: f64,
    pub dissatisfaction_units: f64,
    pub total_weighted_eur: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    InactiveCharged,
    Negative,
    AboveMax,
    Overcharge,
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub slot: usize,
    pub kind: ViolationKind,
    pub energy_kwh: f64,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let what = match self.kind {
            ViolationKind::InactiveCharged => "inactive slot charged",
            ViolationKind::Negative => "negative energy",
            ViolationKind::AboveMax => "above per-slot maximum",
            ViolationKind::Overcharge => "overcharge",
            ViolationKind::NonFinite => "non-finite energy",
        };
        write!(f, "slot {}: {} (e={})", self.slot, what, self.energy_kwh)
    }
}

/// Emitted whenever a session leaves the station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionEndRecord {
    pub slot: usize,
    /// Step during which the session ended.
    pub t: usize,
    pub final_remaining_kwh: f64,
    pub initial_request_kwh: f64,
}

impl SessionEndRecord {
    pub fn satisfaction(&self) -> f64 {
        1.0 - self.final_remaining_kwh / self.initial_request_kwh
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: StationState,
    pub cost: StageCostBreakdown,
    pub ended: Vec<SessionEndRecord>,
    /// End events that hit an inactive slot and were ignored.
    pub ignored_ends: usize,
}

pub fn station_load(action: &ControlAction) -> f64 {
    action.energy_kwh.iter().sum()
}

pub fn satisfaction(slot: &SlotState) -> Result<f64, StationError> {
    if !slot.active || slot.initial_request_kwh <= 0.0 {
        return Err(StationError::Domain);
    }
    Ok(1.0 - slot.remaining_kwh / slot.initial_request_kwh)
}

/// Check every slot and return the complete list of violations.
pub fn validate_action(state: &StationState, action: &ControlAction, config: &StationConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, (slot, &e)) in state.slots.iter().zip(&action.energy_kwh).enumerate() {
        let mut flag = |kind| out.push(Violation { slot: i, kind, energy_kwh: e });
        if !e.is_finite() {
            flag(ViolationKind::NonFinite);
            continue;
        }
        if e < 0.0 {
            flag(ViolationKind::Negative);
        }
        if e > config.e_max + ACTION_TOL {
            flag(ViolationKind::AboveMax);
        }
        if !slot.active {
            if e > 0.0 {
                flag(ViolationKind::InactiveCharged);
            }
        } else if config.eta * e > slot.remaining_kwh + ACTION_TOL {
            flag(ViolationKind::Overcharge);
        }
    }
    out
}

fn charged(r: f64, e: f64, eta: f64) -> f64 {
    let next = r - eta * e;
    if next < ENERGY_EPS {
        0.0
    } else {
        next
    }
}

fn check(state: &StationState, action: &ControlAction, config: &StationConfig) -> Result<(), StationError> {
    if action.energy_kwh.len() != state.slots.len() {
        return Err(StationError::Length {
            expected: state.slots.len(),
            got: action.energy_kwh.len(),
        });
    }
    let violations = validate_action(state, action, config);
    if !violations.is_empty() {
        return Err(StationError::Infeasible { t: state.t, violations });
    }
    Ok(())
}

/// Stage cost of applying `action` in `state`, evaluated after charging.
pub fn stage_cost(state: &StationState, action: &ControlAction, config: &StationConfig) -> Result<StageCostBreakdown, StationError> {
    check(state, action, config)?;
    let load = station_load(action);
    let energy = config.price_at(state.t) * load;
    let penalty = if load > config.c_max { config.xi } else { 0.0 };
    let dissatisfaction: f64 = state
        .slots
        .iter()
        .zip(&action.energy_kwh)
        .filter(|(s, _)| s.active)
        .map(|(s, &e)| charged(s.remaining_kwh, e, config.eta) / s.initial_request_kwh)
        .sum();
    Ok(StageCostBreakdown {
        load_kwh: load,
        energy_cost_eur: energy,
        penalty_eur: penalty,
        dissatisfaction_units: dissatisfaction,
        total_weighted_eur: energy + penalty + config.alpha * dissatisfaction,
    })
}

/// Advance the station by one step.
///
/// Order within the step: charge, stage cost, session ends, session starts,
/// then the announced-time and sojourn clocks.
pub fn step(state: &StationState, action: &ControlAction, w: &ExogenousInput, config: &StationConfig) -> Result<StepOutcome, StationError> {
    let n = state.slots.len();
    if w.events.len() != n {
        return Err(StationError::Length {
            expected: n,
            got: w.events.len(),
        });
    }
    if w.t != state.t {
        return Err(StationError::StepMismatch { state: state.t, input: w.t });
    }
    let cost = stage_cost(state, action, config)?;

    let mut slots = state.slots.clone();
    for (s, &e) in slots.iter_mut().zip(&action.energy_kwh) {
        if s.active {
            s.remaining_kwh = charged(s.remaining_kwh, e, config.eta);
        }
    }

    let mut switched = vec![false; n];
    let mut ended = Vec::new();
    let mut ignored_ends = 0;
    for (i, (s, ev)) in slots.iter_mut().zip(&w.events).enumerate() {
        let expired = s.active && s.announced_steps_left == Some(1);
        if ev.end && !s.active {
            ignored_ends += 1;
        }
        if s.active && (ev.end || expired) {
            ended.push(SessionEndRecord {
                slot: i,
                t: state.t,
                final_remaining_kwh: s.remaining_kwh,
                initial_request_kwh: s.initial_request_kwh,
            });
            *s = SlotState::default();
            switched[i] = true;
        }
    }
    if ignored_ends > 0 {
        log::warn!("step {}: {ignored_ends} end event(s) on inactive slots ignored", state.t);
    }

    let mut started = vec![false; n];
    for (i, (s, ev)) in slots.iter_mut().zip(&w.events).enumerate() {
        if !ev.start {
            continue;
        }
        if s.active {
            return Err(StationError::StartOnActive { slot: i, t: state.t });
        }
        if !(ev.request_kwh > 0.0 && ev.request_kwh.is_finite()) || ev.announced_duration_steps == 0 {
            return Err(StationError::BadStart {
                slot: i,
                t: state.t,
                k: ev.request_kwh,
                delta: ev.announced_duration_steps,
            });
        }
        *s = SlotState {
            active: true,
            remaining_kwh: ev.request_kwh,
            initial_request_kwh: ev.request_kwh,
            announced_steps_left: Some(ev.announced_duration_steps),
            sojourn_steps: 0,
        };
        switched[i] = true;
        started[i] = true;
    }

    for (i, s) in slots.iter_mut().enumerate() {
        if switched[i] {
            s.sojourn_steps = 0;
        } else {
            s.sojourn_steps += 1;
        }
        if s.active && !started[i] {
            s.announced_steps_left = s.announced_steps_left.map(|m| m - 1);
        }
    }

    Ok(StepOutcome {
        state: StationState { t: state.t + 1, slots },
        cost,
        ended,
        ignored_ends,
    })
}
