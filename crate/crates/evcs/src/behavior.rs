//! Sojourn-time dependent switching model for slot activity and the
//! request-size function, fitted by binned frequencies with Laplace smoothing
//! and hierarchical backoff.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::station::StationState;
use crate::trace::{Clock, DiscretizedTrace};

pub const MODEL_FORMAT: &str = "evcs-behavior-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum BehaviorError {
    #[error("training trace contains no sessions")]
    EmptyTrace,
    #[error("invalid binning: {0}")]
    Binning(String),
    #[error("p_start needs an inactive context and p_end an active one")]
    WrongState,
    #[error("slot {slot} outside the model's {n} slots")]
    UnknownSlot { slot: usize, n: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Features the switching probabilities are conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransitionContext {
    pub prev_active: bool,
    pub sojourn_steps: u32,
    pub hour: u8,
    /// Monday is 0.
    pub weekday: u8,
    pub slot: usize,
}

/// Anything that can drive scenario generation.
pub trait TransitionEstimator: Send + Sync {
    /// Probability that the slot leaves its current state (`ctx.prev_active`)
    /// during the step described by `ctx`.
    fn switch_probability(&self, ctx: &TransitionContext) -> f64;

    /// Energy request of a session starting in `ctx`.
    fn predict_kwh(&self, ctx: &TransitionContext) -> f64;
}

pub fn featurize(state: &StationState, slot: usize, clock: &Clock) -> TransitionContext {
    let s = &state.slots[slot];
    TransitionContext {
        prev_active: s.active,
        sojourn_steps: s.sojourn_steps,
        hour: clock.hour(state.t),
        weekday: clock.weekday(state.t),
        slot,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningConfig {
    /// Lower edges of the sojourn bins; the last bin is open ended.
    pub sojourn_bin_edges: Vec<u32>,
    pub laplace_alpha: f64,
    pub backoff_min_count: u64,
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self {
            sojourn_bin_edges: vec![0, 1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 96],
            laplace_alpha: 1.0,
            backoff_min_count: 20,
        }
    }
}

impl BinningConfig {
    pub fn validate(&self) -> Result<(), BehaviorError> {
        if self.sojourn_bin_edges.first() != Some(&0) {
            return Err(BehaviorError::Binning("first edge must be 0".into()));
        }
        if self.sojourn_bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BehaviorError::Binning("edges must be strictly ascending".into()));
        }
        if self.sojourn_bin_edges.len() > 250 {
            return Err(BehaviorError::Binning("too many bins".into()));
        }
        if !(self.laplace_alpha > 0.0 && self.laplace_alpha.is_finite()) {
            return Err(BehaviorError::Binning("laplace_alpha must be positive".into()));
        }
        Ok(())
    }

    pub fn bin_of(&self, sojourn: u32) -> usize {
        self.sojourn_bin_edges.partition_point(|&e| e <= sojourn) - 1
    }

    pub fn n_bins(&self) -> usize {
        self.sojourn_bin_edges.len()
    }
}

const ANY8: u8 = u8::MAX;
const ANY_SLOT: u32 = u32::MAX;

/// Cell address; `ANY*` marks a pooled dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
struct Cell {
    y: u8,
    bin: u8,
    hour: u8,
    weekday: u8,
    slot: u32,
}

impl Cell {
    /// Backoff chain from most to least specific.
    fn chain(y: u8, bin: u8, hour: u8, weekday: u8, slot: u32) -> [Cell; 5] {
        [
            Cell { y, bin, hour, weekday, slot },
            Cell {
                y,
                bin,
                hour,
                weekday,
                slot: ANY_SLOT,
            },
            Cell {
                y,
                bin,
                hour,
                weekday: ANY8,
                slot: ANY_SLOT,
            },
            Cell {
                y,
                bin,
                hour: ANY8,
                weekday: ANY8,
                slot: ANY_SLOT,
            },
            Cell {
                y,
                bin: ANY8,
                hour: ANY8,
                weekday: ANY8,
                slot: ANY_SLOT,
            },
        ]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct Tally {
    n: u64,
    /// Switch count, or the sum of requests for kWh cells.
    sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub sessions: usize,
    pub steps: usize,
    pub first_day: chrono::NaiveDate,
    pub last_day: chrono::NaiveDate,
    pub sessions_per_slot: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    n_slots: usize,
    binning: BinningConfig,
    training: TrainingInfo,
    switches: Vec<(Cell, Tally)>,
    requests: Vec<(Cell, Tally)>,
}

/// Fitted switching model. Counts are the source of truth; the dense lookup
/// tables are derived from them and rebuilt on load.
#[derive(Debug, Clone)]
pub struct BehaviorModel {
    n_slots: usize,
    binning: BinningConfig,
    training: TrainingInfo,
    switches: BTreeMap<Cell, Tally>,
    requests: BTreeMap<Cell, Tally>,
    p_table: Vec<f64>,
    k_table: Vec<f64>,
}

impl PartialEq for BehaviorModel {
    fn eq(&self, other: &Self) -> bool {
        self.n_slots == other.n_slots
            && self.binning == other.binning
            && self.training == other.training
            && self.switches == other.switches
            && self.requests == other.requests
    }
}

fn add(map: &mut BTreeMap<Cell, Tally>, chain: &[Cell; 5], with_slot: bool, value: f64) {
    for c in chain.iter().skip(usize::from(!with_slot)) {
        let e = map.entry(*c).or_default();
        e.n += 1;
        e.sum += value;
    }
}

impl BehaviorModel {
    pub fn fit(trace: &DiscretizedTrace, binning: &BinningConfig) -> Result<Self, BehaviorError> {
        binning.validate()?;
        if trace.sessions.is_empty() {
            return Err(BehaviorError::EmptyTrace);
        }
        let n = trace.n_slots();
        let mut sessions_per_slot = vec![0usize; n];
        for s in &trace.sessions {
            sessions_per_slot[s.slot] += 1;
        }
        let mut switches = BTreeMap::new();
        let mut requests = BTreeMap::new();
        // per slot: (active, sojourn, announced steps left)
        let mut slot = vec![(false, 0u32, 0u32); n];
        for (t, w) in trace.steps.iter().enumerate() {
            let hour = trace.clock.hour(t);
            let weekday = trace.clock.weekday(t);
            for (i, ev) in w.events.iter().enumerate() {
                let (active, g, m) = slot[i];
                let bin = binning.bin_of(g) as u8;
                let y = u8::from(active);
                let chain = Cell::chain(y, bin, hour, weekday, i as u32);
                let seen = sessions_per_slot[i] > 0;
                let ended = active && (ev.end || m == 1);
                let switched = if active { ended } else { ev.start };
                add(&mut switches, &chain, seen, f64::from(u8::from(switched)));
                if ev.start {
                    let g0 = if active { 0 } else { g };
                    let kchain = Cell::chain(0, binning.bin_of(g0) as u8, hour, weekday, i as u32);
                    add(&mut requests, &kchain, seen, ev.request_kwh);
                }
                slot[i] = if ev.start {
                    (true, 0, ev.announced_duration_steps)
                } else if ended {
                    (false, 0, 0)
                } else {
                    (active, g + 1, m.saturating_sub(u32::from(active)))
                };
            }
        }
        let training = TrainingInfo {
            sessions: trace.sessions.len(),
            steps: trace.len(),
            first_day: trace.clock.epoch,
            last_day: trace.clock.datetime(trace.len().saturating_sub(1)).date(),
            sessions_per_slot,
        };
        Ok(Self::from_counts(n, binning.clone(), training, switches, requests))
    }

    fn from_counts(n_slots: usize, binning: BinningConfig, training: TrainingInfo, switches: BTreeMap<Cell, Tally>, requests: BTreeMap<Cell, Tally>) -> Self {
        let mut m = Self {
            n_slots,
            binning,
            training,
            switches,
            requests,
            p_table: Vec::new(),
            k_table: Vec::new(),
        };
        let bins = m.binning.n_bins();
        let size = 2 * bins * 24 * 7 * n_slots;
        m.p_table = vec![0.0; size];
        m.k_table = vec![0.0; size / 2];
        for y in 0..2u8 {
            for bin in 0..bins as u8 {
                for hour in 0..24u8 {
                    for wd in 0..7u8 {
                        for s in 0..n_slots {
                            let chain = Cell::chain(y, bin, hour, wd, s as u32);
                            let idx = m.index(y, bin as usize, hour, wd, s);
                            m.p_table[idx] = m.resolve_probability(&chain, s);
                            if y == 0 {
                                m.k_table[idx] = m.resolve_mean(&chain, s);
                            }
                        }
                    }
                }
            }
        }
        m
    }

    fn index(&self, y: u8, bin: usize, hour: u8, weekday: u8, slot: usize) -> usize {
        let bins = self.binning.n_bins();
        (((y as usize * bins + bin) * 24 + hour as usize) * 7 + weekday as usize) * self.n_slots + slot
    }

    fn pick<'a>(&'a self, map: &'a BTreeMap<Cell, Tally>, chain: &[Cell; 5], slot: usize) -> Option<&'a Tally> {
        let skip = usize::from(self.training.sessions_per_slot[slot] == 0);
        let min = self.binning.backoff_min_count;
        let mut fallback = None;
        for c in chain.iter().skip(skip) {
            if let Some(t) = map.get(c) {
                if t.n >= min {
                    return Some(t);
                }
                fallback = Some(t);
            }
        }
        // even the global pool is small; use it anyway
        map.get(&chain[4]).or(fallback)
    }

    fn resolve_probability(&self, chain: &[Cell; 5], slot: usize) -> f64 {
        let a = self.binning.laplace_alpha;
        let t = self.pick(&self.switches, chain, slot).copied().unwrap_or_default();
        (t.sum + a) / (t.n as f64 + 2.0 * a)
    }

    fn resolve_mean(&self, chain: &[Cell; 5], slot: usize) -> f64 {
        let t = self.pick(&self.requests, chain, slot).copied().unwrap_or_default();
        if t.n == 0 {
            // no starts anywhere for this pooled chain; fall back to the global mean
            let g = self.requests.get(&chain[4]).copied().unwrap_or_default();
            return g.sum / g.n.max(1) as f64;
        }
        t.sum / t.n as f64
    }

    fn lookup(&self, ctx: &TransitionContext) -> usize {
        let bin = self.binning.bin_of(ctx.sojourn_steps);
        let slot = ctx.slot.min(self.n_slots - 1);
        self.index(u8::from(ctx.prev_active), bin, ctx.hour % 24, ctx.weekday % 7, slot)
    }

    fn check_slot(&self, ctx: &TransitionContext) -> Result<(), BehaviorError> {
        if ctx.slot >= self.n_slots {
            return Err(BehaviorError::UnknownSlot {
                slot: ctx.slot,
                n: self.n_slots,
            });
        }
        Ok(())
    }

    pub fn p_start(&self, ctx: &TransitionContext) -> Result<f64, BehaviorError> {
        if ctx.prev_active {
            return Err(BehaviorError::WrongState);
        }
        self.check_slot(ctx)?;
        Ok(self.p_table[self.lookup(ctx)])
    }

    pub fn p_end(&self, ctx: &TransitionContext) -> Result<f64, BehaviorError> {
        if !ctx.prev_active {
            return Err(BehaviorError::WrongState);
        }
        self.check_slot(ctx)?;
        Ok(self.p_table[self.lookup(ctx)])
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn binning(&self) -> &BinningConfig {
        &self.binning
    }

    pub fn training(&self) -> &TrainingInfo {
        &self.training
    }

    /// Observation and switch counts of one fully specified cell.
    pub fn cell_counts(&self, ctx: &TransitionContext) -> (u64, f64) {
        let bin = self.binning.bin_of(ctx.sojourn_steps) as u8;
        let c = Cell::chain(u8::from(ctx.prev_active), bin, ctx.hour, ctx.weekday, ctx.slot as u32)[0];
        self.switches.get(&c).map_or((0, 0.0), |t| (t.n, t.sum))
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            n_slots: self.n_slots,
            binning: self.binning.clone(),
            training: self.training.clone(),
            switches: self.switches.iter().map(|(c, t)| (*c, *t)).collect(),
            requests: self.requests.iter().map(|(c, t)| (*c, *t)).collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BehaviorError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| BehaviorError::Format(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(BehaviorError::Format(format!("not a behavior model: '{}'", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(BehaviorError::Format(format!("unsupported version {}", file.version)));
        }
        file.binning.validate()?;
        if file.training.sessions_per_slot.len() != file.n_slots || file.n_slots == 0 {
            return Err(BehaviorError::Format("slot count mismatch".into()));
        }
        Ok(Self::from_counts(
            file.n_slots,
            file.binning,
            file.training,
            file.switches.into_iter().collect(),
            file.requests.into_iter().collect(),
        ))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), BehaviorError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, BehaviorError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl TransitionEstimator for BehaviorModel {
    fn switch_probability(&self, ctx: &TransitionContext) -> f64 {
        self.p_table[self.lookup(ctx)]
    }

    fn predict_kwh(&self, ctx: &TransitionContext) -> f64 {
        let c = TransitionContext { prev_active: false, ..*ctx };
        self.k_table[self.lookup(&c)]
    }
}
