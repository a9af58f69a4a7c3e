//! Forecasts of future exogenous inputs: Monte-Carlo samples, their reduction
//! to a few weighted representatives, and the deterministic forecasts used by
//! the single-scenario controllers.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{TransitionContext, TransitionEstimator};
use crate::cluster::{kmeans, medoid};
use crate::par::{map_indexed, Exec};
use crate::rng::stream_seed;
use crate::station::{ExogenousInput, SlotEvent, StationState};
use crate::trace::{Clock, DiscretizedTrace};

pub const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScenarioError {
    #[error("reduced count {reduced} must lie in 1..={samples}")]
    BadReduction { reduced: usize, samples: usize },
    #[error("step {t0} is beyond the trace end {len}")]
    BeyondTrace { t0: usize, len: usize },
    #[error("scenario step {tau}, slot {slot}: {msg}")]
    Illegal { tau: usize, slot: usize, msg: String },
    #[error("scenario set is empty")]
    Empty,
}

/// A stretch of chargeable steps of one session inside a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedSession {
    pub slot: usize,
    /// First and last chargeable horizon offsets, inclusive.
    pub first: usize,
    pub last: usize,
    /// Remaining energy when the stretch begins.
    pub r0: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub t0: usize,
    /// Inputs for steps `t0..=t0+R`; the first one is the observed input.
    pub steps: Vec<ExogenousInput>,
    pub weight: f64,
    /// Load outside the controller's reach per horizon step, kWh.
    pub uncontrollable_kwh: Vec<f64>,
}

impl Scenario {
    pub fn horizon(&self) -> usize {
        self.steps.len() - 1
    }

    /// Replay the events from `state` and return the chargeable stretches.
    pub fn sessions(&self, state: &StationState) -> Result<Vec<PlannedSession>, ScenarioError> {
        let r = self.horizon();
        let mut out = Vec::new();
        for (i, slot) in state.slots.iter().enumerate() {
            let mut cur = slot
                .active
                .then_some((0usize, slot.remaining_kwh, slot.initial_request_kwh, slot.announced_steps_left));
            for (tau, w) in self.steps.iter().enumerate() {
                let ev = w.events.get(i).copied().unwrap_or_default();
                if ev.start && ev.end {
                    return Err(illegal(tau, i, "start and end together"));
                }
                match cur {
                    Some((first, r0, z, m)) if ev.end || m == Some(1) => {
                        out.push(PlannedSession {
                            slot: i,
                            first,
                            last: tau,
                            r0,
                            z,
                        });
                        cur = None;
                    }
                    None if ev.end => return Err(illegal(tau, i, "end on an inactive slot")),
                    _ => {}
                }
                let started = ev.start;
                if started {
                    if cur.is_some() {
                        return Err(illegal(tau, i, "start on an active slot"));
                    }
                    if !(ev.request_kwh > 0.0) || ev.announced_duration_steps == 0 {
                        return Err(illegal(tau, i, "start needs k > 0 and delta >= 1"));
                    }
                    cur = Some((tau + 1, ev.request_kwh, ev.request_kwh, Some(ev.announced_duration_steps)));
                } else if let Some(c) = cur.as_mut() {
                    c.3 = c.3.map(|m| m - 1);
                }
            }
            if let Some((first, r0, z, _)) = cur {
                if first <= r {
                    out.push(PlannedSession {
                        slot: i,
                        first,
                        last: r,
                        r0,
                        z,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Active slot count per horizon step.
    pub fn active_counts(&self, state: &StationState) -> Result<Vec<usize>, ScenarioError> {
        let mut counts = vec![0; self.steps.len()];
        for s in self.sessions(state)? {
            for c in &mut counts[s.first..=s.last] {
                *c += 1;
            }
        }
        Ok(counts)
    }

    /// Clustering features: requested kWh of new sessions per step followed
    /// by the active count per step.
    pub fn embedding(&self, state: &StationState) -> Result<Vec<f64>, ScenarioError> {
        let mut v: Vec<f64> = self
            .steps
            .iter()
            .map(|w| w.events.iter().filter(|e| e.start).map(|e| e.request_kwh).sum())
            .collect();
        v.extend(self.active_counts(state)?.into_iter().map(|c| c as f64));
        Ok(v)
    }

    /// One line per non-empty event: `t,slot,a,q,k,delta`.
    pub fn dump(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "# weight={}", self.weight)?;
        for w in &self.steps {
            for (i, e) in w.events.iter().enumerate() {
                if !e.is_empty() {
                    writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        w.t, i, e.start as u8, e.end as u8, e.request_kwh, e.announced_duration_steps
                    )?;
                }
            }
        }
        Ok(())
    }
}

fn illegal(tau: usize, slot: usize, msg: &str) -> ScenarioError {
    ScenarioError::Illegal {
        tau,
        slot,
        msg: msg.to_string(),
    }
}

/// Mean energy drawn per step by each slot, by hour of day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvgLoadTable {
    /// `kwh[slot][hour]`
    pub kwh: Vec<[f64; 24]>,
}

impl AvgLoadTable {
    pub fn zeros(n: usize) -> Self {
        Self { kwh: vec![[0.0; 24]; n] }
    }

    pub fn get(&self, slot: usize, hour: usize) -> f64 {
        self.kwh.get(slot).map_or(0.0, |h| h[hour % 24])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedScenarioSet {
    pub scenarios: Vec<Scenario>,
    /// Index of each retained scenario in the original sample set.
    pub members: Vec<usize>,
}

/// How switches are decided while walking the horizon.
enum Walk<'a> {
    Sample(&'a mut ChaCha8Rng),
    /// Switch once the probability of having switched reaches one half.
    Median,
}

/// Per slot: where the slot stands after the observed step `t0`.
struct SlotStart {
    active: bool,
    sojourn: u32,
    /// Last horizon offset the current session may run to (announced expiry).
    cap: Option<usize>,
}

fn after_observed(state: &StationState, observed: &ExogenousInput, slot: usize) -> SlotStart {
    let s = &state.slots[slot];
    let ev = observed.events[slot];
    let ended = s.active && (ev.end || s.announced_steps_left == Some(1));
    if ev.start {
        SlotStart {
            active: true,
            sojourn: 0,
            cap: Some(ev.announced_duration_steps as usize),
        }
    } else if ended {
        SlotStart {
            active: false,
            sojourn: 0,
            cap: None,
        }
    } else {
        SlotStart {
            active: s.active,
            sojourn: s.sojourn_steps + 1,
            cap: s.active.then(|| s.announced_steps_left.map_or(usize::MAX, |m| m as usize - 1)),
        }
    }
}

fn walk(state: &StationState, observed: &ExogenousInput, est: &dyn TransitionEstimator, clock: &Clock, horizon: usize, mut mode: Walk<'_>) -> Scenario {
    let n = state.slots.len();
    let t0 = state.t;
    let mut steps: Vec<ExogenousInput> = (0..=horizon).map(|tau| ExogenousInput::empty(t0 + tau, n)).collect();
    steps[0] = ExogenousInput {
        t: t0,
        events: observed.events.clone(),
    };
    for slot in 0..n {
        let SlotStart {
            mut active,
            mut sojourn,
            mut cap,
        } = after_observed(state, observed, slot);
        let mut survival = 1.0;
        // (start offset, k) of a session sampled inside the horizon
        let mut pending: Option<(usize, f64)> = None;
        for tau in 1..=horizon {
            let t = t0 + tau;
            let ctx = TransitionContext {
                prev_active: active,
                sojourn_steps: sojourn,
                hour: clock.hour(t),
                weekday: clock.weekday(t),
                slot,
            };
            let p = est.switch_probability(&ctx).clamp(0.0, 1.0);
            let switch = match &mut mode {
                Walk::Sample(rng) => rng.gen::<f64>() < p,
                Walk::Median => {
                    survival *= 1.0 - p;
                    1.0 - survival >= 0.5
                }
            };
            if active {
                let expired = cap == Some(tau);
                if switch || expired {
                    if let Some((s, k)) = pending.take() {
                        steps[s].events[slot] = SlotEvent::start(k, (tau - s) as u32);
                    } else if !expired {
                        steps[tau].events[slot] = SlotEvent::end();
                    }
                    active = false;
                    sojourn = 0;
                    cap = None;
                    survival = 1.0;
                } else {
                    sojourn += 1;
                }
            } else if switch {
                pending = Some((tau, est.predict_kwh(&ctx).max(1e-3)));
                active = true;
                sojourn = 0;
                survival = 1.0;
            } else {
                sojourn += 1;
            }
        }
        if let Some((s, k)) = pending {
            steps[s].events[slot] = SlotEvent::start(k, (horizon - s).max(1) as u32);
        }
    }
    Scenario {
        t0,
        steps,
        weight: 1.0,
        uncontrollable_kwh: vec![0.0; horizon + 1],
    }
}

pub fn sample_scenario(
    state: &StationState,
    observed: &ExogenousInput,
    est: &dyn TransitionEstimator,
    clock: &Clock,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Scenario {
    walk(state, observed, est, clock, horizon, Walk::Sample(rng))
}

/// `k` independent samples. Sample `j` draws from its own stream derived from
/// `(seed, t0, j)`, so the set does not depend on the execution mode.
#[allow(clippy::too_many_arguments)]
pub fn sample_set(
    state: &StationState,
    observed: &ExogenousInput,
    est: &dyn TransitionEstimator,
    clock: &Clock,
    horizon: usize,
    k: usize,
    seed: u64,
    exec: Exec,
) -> Vec<Scenario> {
    map_indexed(exec, k, |j| {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &[state.t as u64, j as u64]));
        sample_scenario(state, observed, est, clock, horizon, &mut rng)
    })
}

/// Cluster the samples and keep the member nearest each centroid, weighted by
/// cluster size.
pub fn reduce(set: &[Scenario], reduced: usize, state: &StationState, rng: &mut ChaCha8Rng) -> Result<ReducedScenarioSet, ScenarioError> {
    let k = set.len();
    if k == 0 {
        return Err(ScenarioError::Empty);
    }
    if reduced == 0 || reduced > k {
        return Err(ScenarioError::BadReduction { reduced, samples: k });
    }
    if reduced == k {
        return Ok(ReducedScenarioSet {
            scenarios: set
                .iter()
                .map(|s| Scenario {
                    weight: 1.0 / k as f64,
                    ..s.clone()
                })
                .collect(),
            members: (0..k).collect(),
        });
    }
    let points: Vec<Vec<f64>> = set.iter().map(|s| s.embedding(state)).collect::<Result<_, _>>()?;
    let km = kmeans(&points, reduced, KMEANS_MAX_ITER, rng);
    let mut scenarios = Vec::new();
    let mut members = Vec::new();
    for j in 0..km.centroids.len() {
        let size = km.assignment.iter().filter(|&&a| a == j).count();
        if let Some(m) = medoid(&points, &km, j) {
            scenarios.push(Scenario {
                weight: size as f64 / k as f64,
                ..set[m].clone()
            });
            members.push(m);
        }
    }
    Ok(ReducedScenarioSet { scenarios, members })
}

/// Deterministic forecast: each switch happens at the median of its waiting time.
pub fn point_forecast(state: &StationState, observed: &ExogenousInput, est: &dyn TransitionEstimator, clock: &Clock, horizon: usize) -> Scenario {
    walk(state, observed, est, clock, horizon, Walk::Median)
}

/// Announced departure times taken at face value, no future arrivals, and the
/// average load of currently idle slots as uncontrollable consumption.
pub fn request_based_forecast(
    state: &StationState,
    observed: &ExogenousInput,
    table: &AvgLoadTable,
    clock: &Clock,
    horizon: usize,
) -> (Scenario, Vec<Vec<f64>>) {
    let n = state.slots.len();
    let t0 = state.t;
    let mut steps: Vec<ExogenousInput> = (0..=horizon).map(|tau| ExogenousInput::empty(t0 + tau, n)).collect();
    steps[0] = ExogenousInput {
        t: t0,
        events: observed.events.clone(),
    };
    let idle: Vec<bool> = (0..n).map(|i| !state.slots[i].active && !observed.events[i].start).collect();
    let mut per_slot = vec![vec![0.0; n]; horizon + 1];
    for (tau, row) in per_slot.iter_mut().enumerate().skip(1) {
        let hour = clock.hour(t0 + tau);
        for (i, v) in row.iter_mut().enumerate() {
            if idle[i] {
                *v = table.get(i, hour as usize);
            }
        }
    }
    let totals = per_slot.iter().map(|r| r.iter().sum()).collect();
    (
        Scenario {
            t0,
            steps,
            weight: 1.0,
            uncontrollable_kwh: totals,
        },
        per_slot,
    )
}

/// The realized inputs, padded with empty steps past the end of the trace.
pub fn perfect_forecast(trace: &DiscretizedTrace, t0: usize, horizon: usize) -> Result<Scenario, ScenarioError> {
    if t0 >= trace.len() {
        return Err(ScenarioError::BeyondTrace { t0, len: trace.len() });
    }
    let n = trace.n_slots();
    let steps = (0..=horizon)
        .map(|tau| trace.steps.get(t0 + tau).cloned().unwrap_or_else(|| ExogenousInput::empty(t0 + tau, n)))
        .collect();
    Ok(Scenario {
        t0,
        steps,
        weight: 1.0,
        uncontrollable_kwh: vec![0.0; horizon + 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::station::SlotState;
    use chrono::NaiveDate;

    struct Const {
        start: f64,
        end: f64,
        kwh: f64,
    }

    impl TransitionEstimator for Const {
        fn switch_probability(&self, ctx: &TransitionContext) -> f64 {
            if ctx.prev_active {
                self.end
            } else {
                self.start
            }
        }
        fn predict_kwh(&self, _: &TransitionContext) -> f64 {
            self.kwh
        }
    }

    fn clock() -> Clock {
        Clock {
            epoch: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
            dt_minutes: 15,
        }
    }

    fn state() -> StationState {
        let mut s = StationState::empty(3);
        s.t = 40;
        s.slots[0] = SlotState {
            active: true,
            remaining_kwh: 5.0,
            initial_request_kwh: 8.0,
            announced_steps_left: Some(6),
            sojourn_steps: 3,
        };
        s
    }

    #[test]
    fn frozen_model_keeps_sessions_to_announced_end() {
        let est = Const {
            start: 0.0,
            end: 0.0,
            kwh: 5.0,
        };
        let s = state();
        let obs = ExogenousInput::empty(40, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sc = sample_scenario(&s, &obs, &est, &clock(), 10, &mut rng);
        let sess = sc.sessions(&s).unwrap();
        assert_eq!(
            sess,
            vec![PlannedSession {
                slot: 0,
                first: 0,
                last: 5,
                r0: 5.0,
                z: 8.0
            }]
        );
        assert_eq!(sc.steps[0], obs);
    }

    #[test]
    fn certain_end_stops_at_next_step() {
        let est = Const {
            start: 0.0,
            end: 1.0,
            kwh: 5.0,
        };
        let s = state();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sc = sample_scenario(&s, &ExogenousInput::empty(40, 3), &est, &clock(), 10, &mut rng);
        assert!(sc.steps[1].events[0].end);
        assert_eq!(sc.sessions(&s).unwrap()[0].last, 1);
    }

    #[test]
    fn sampled_sessions_are_legal() {
        let est = Const {
            start: 0.3,
            end: 0.2,
            kwh: 7.0,
        };
        let s = state();
        let mut obs = ExogenousInput::empty(40, 3);
        obs.events[2] = SlotEvent::start(4.0, 3);
        let set = sample_set(&s, &obs, &est, &clock(), 30, 50, 5, Exec::Sequential);
        for sc in &set {
            assert_eq!(sc.steps[0], obs);
            let sess = sc.sessions(&s).unwrap();
            for p in &sess {
                assert!(p.first <= p.last && p.last <= 30 && p.z > 0.0);
            }
            // observed start capped by its announced duration
            let third: Vec<_> = sess.iter().filter(|p| p.slot == 2 && p.first == 1).collect();
            assert_eq!(third.len(), 1);
            assert!(third[0].last <= 3);
        }
        assert_eq!(set, sample_set(&s, &obs, &est, &clock(), 30, 50, 5, Exec::Parallel));
    }

    #[test]
    fn degenerate_model_gives_identical_samples() {
        let est = Const {
            start: 1.0,
            end: 1.0,
            kwh: 7.0,
        };
        let s = state();
        let set = sample_set(&s, &ExogenousInput::empty(40, 3), &est, &clock(), 12, 20, 3, Exec::Sequential);
        assert!(set.windows(2).all(|w| w[0] == w[1]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let red = reduce(&set, 2, &s, &mut rng).unwrap();
        assert_eq!(red.scenarios.len(), 1);
        assert_eq!(red.scenarios[0].weight, 1.0);
    }

    #[test]
    fn median_rule() {
        let est = Const {
            start: 0.0,
            end: 0.5,
            kwh: 7.0,
        };
        let s = state();
        let sc = point_forecast(&s, &ExogenousInput::empty(40, 3), &est, &clock(), 10);
        assert_eq!(sc.sessions(&s).unwrap()[0].last, 1);
        // hazard 0.2: survival 0.8^k drops below one half at k = 4
        let est = Const {
            start: 0.0,
            end: 0.2,
            kwh: 7.0,
        };
        let sc = point_forecast(&s, &ExogenousInput::empty(40, 3), &est, &clock(), 10);
        assert_eq!(sc.sessions(&s).unwrap()[0].last, 4);
        assert_eq!(sc, point_forecast(&s, &ExogenousInput::empty(40, 3), &est, &clock(), 10));
    }

    #[test]
    fn reduce_bounds() {
        let est = Const {
            start: 0.3,
            end: 0.3,
            kwh: 7.0,
        };
        let s = state();
        let set = sample_set(&s, &ExogenousInput::empty(40, 3), &est, &clock(), 12, 5, 3, Exec::Sequential);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(reduce(&set, 6, &s, &mut rng).is_err());
        assert!(reduce(&set, 0, &s, &mut rng).is_err());
        let all = reduce(&set, 5, &s, &mut rng).unwrap();
        assert!(all.scenarios.iter().all(|x| x.weight == 0.2));
        let one = reduce(&set, 1, &s, &mut rng).unwrap();
        assert_eq!(one.scenarios.len(), 1);
        assert_eq!(one.scenarios[0].weight, 1.0);
    }

    #[test]
    fn perfect_forecast_pads() {
        let mut steps: Vec<ExogenousInput> = (0..10).map(|t| ExogenousInput::empty(t, 1)).collect();
        steps[8].events[0] = SlotEvent::start(3.0, 4);
        let tr = DiscretizedTrace::from_events(clock(), vec!["a".into()], steps.clone()).unwrap();
        let sc = perfect_forecast(&tr, 7, 5).unwrap();
        assert_eq!(sc.steps.len(), 6);
        assert_eq!(sc.steps[1], steps[8]);
        assert_eq!(sc.steps[5], ExogenousInput::empty(12, 1));
        assert!(perfect_forecast(&tr, 10, 5).is_err());
    }

    #[test]
    fn dump_lists_events() {
        let mut steps: Vec<ExogenousInput> = (0..3).map(|t| ExogenousInput::empty(t, 2)).collect();
        steps[1].events[1] = SlotEvent::start(2.5, 4);
        let sc = Scenario {
            t0: 0,
            steps,
            weight: 0.5,
            uncontrollable_kwh: vec![0.0; 3],
        };
        let mut buf = Vec::new();
        sc.dump(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# weight=0.5\n1,1,1,0,2.5,4\n");
    }
}
