//! Synthetic session generator with a known switching process.
//!
//! Each slot runs the same two-state process the behavior model assumes: an
//! idle slot starts a session with probability
//! `arrival_hourly[hour] * slot_scale[slot] * weekday_scale[wd] * arrival_sojourn_factor[bin(g)]`,
//! an active one ends with probability `end_hazard[bin(g)]`. Times are placed
//! inside the step grid so that discretization recovers the steps exactly.

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::parse::RawSession;
use super::DataError;
use crate::behavior::{BinningConfig, TransitionContext, TransitionEstimator};
use crate::rng::stream_seed;
use crate::trace::Clock;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RequestDistribution {
    Constant { kwh: f64 },
    Uniform { low: f64, high: f64 },
}

impl RequestDistribution {
    pub fn mean(&self) -> f64 {
        match *self {
            Self::Constant { kwh } => kwh,
            Self::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Self::Constant { kwh } => kwh,
            Self::Uniform { low, high } => rng.gen_range(low..=high),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_slots: usize,
    pub days: usize,
    pub dt_minutes: u32,
    pub start_date: NaiveDate,
    /// Lower edges of the sojourn bins the hazards are constant on.
    pub sojourn_bin_edges: Vec<u32>,
    /// Per-hour arrival hazard of an idle slot, 24 values.
    pub arrival_hourly: Vec<f64>,
    /// Multiplier per slot; empty means all ones.
    #[serde(default)]
    pub slot_scale: Vec<f64>,
    /// Multiplier per weekday (Monday first); empty means all ones.
    #[serde(default)]
    pub weekday_scale: Vec<f64>,
    /// Multiplier on the arrival hazard per idle-sojourn bin.
    pub arrival_sojourn_factor: Vec<f64>,
    /// End hazard per active-sojourn bin.
    pub end_hazard: Vec<f64>,
    pub request: RequestDistribution,
    /// Probability that a driver announces a longer stay than they take.
    pub early_probability: f64,
    /// Extra announced steps for early leavers, drawn uniformly in `[lo, hi]`.
    pub early_gap_steps: (u32, u32),
    /// Place connections at a random minute inside their step.
    #[serde(default = "yes")]
    pub jitter: bool,
}

fn yes() -> bool {
    true
}

impl SynthConfig {
    /// A small busy station used by the examples and trend tests.
    pub fn small_world(n_slots: usize, days: usize) -> Self {
        let mut hourly = vec![0.004; 24];
        for (h, v) in hourly.iter_mut().enumerate() {
            if (7..10).contains(&h) {
                *v = 0.12;
            } else if (10..19).contains(&h) {
                *v = 0.05;
            }
        }
        Self {
            n_slots,
            days,
            dt_minutes: 15,
            start_date: NaiveDate::from_ymd_opt(2024, 3, 4).expect("valid date"),
            sojourn_bin_edges: BinningConfig::default().sojourn_bin_edges,
            arrival_hourly: hourly,
            slot_scale: vec![],
            weekday_scale: vec![],
            arrival_sojourn_factor: vec![0.3, 0.5, 0.7, 0.9, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            end_hazard: vec![0.01, 0.01, 0.02, 0.02, 0.03, 0.04, 0.05, 0.06, 0.08, 0.10, 0.15, 0.3, 0.5],
            request: RequestDistribution::Uniform { low: 4.0, high: 20.0 },
            early_probability: 0.5,
            early_gap_steps: (4, 16),
            jitter: true,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bins = self.sojourn_bin_edges.len();
        let bad = |m: &str| Err(DataError::Config(format!("synthetic config: {m}")));
        BinningConfig {
            sojourn_bin_edges: self.sojourn_bin_edges.clone(),
            ..Default::default()
        }
        .validate()
        .map_err(|e| DataError::Config(e.to_string()))?;
        if self.n_slots == 0 {
            return bad("n_slots must be positive");
        }
        if self.dt_minutes == 0 || 60 % self.dt_minutes != 0 {
            return bad("dt_minutes must divide 60");
        }
        if self.arrival_hourly.len() != 24 {
            return bad("arrival_hourly needs 24 values");
        }
        if self.arrival_sojourn_factor.len() != bins || self.end_hazard.len() != bins {
            return bad("arrival_sojourn_factor and end_hazard need one value per bin");
        }
        if !self.slot_scale.is_empty() && self.slot_scale.len() != self.n_slots {
            return bad("slot_scale needs one value per slot");
        }
        if !self.weekday_scale.is_empty() && self.weekday_scale.len() != 7 {
            return bad("weekday_scale needs 7 values");
        }
        let probs = self.arrival_hourly.iter().chain(&self.end_hazard).chain(&self.arrival_sojourn_factor);
        if probs.chain(&self.slot_scale).chain(&self.weekday_scale).any(|p| !(*p >= 0.0 && p.is_finite())) {
            return bad("hazards and factors must be finite and nonnegative");
        }
        if !(0.0..=1.0).contains(&self.early_probability) || self.early_gap_steps.0 == 0 || self.early_gap_steps.0 > self.early_gap_steps.1 {
            return bad("early disconnection settings out of range");
        }
        match self.request {
            RequestDistribution::Constant { kwh } if kwh > 0.0 => {}
            RequestDistribution::Uniform { low, high } if low > 0.0 && high >= low => {}
            _ => return bad("requests must be positive"),
        }
        Ok(())
    }

    pub fn clock(&self) -> Clock {
        Clock {
            epoch: self.start_date,
            dt_minutes: self.dt_minutes,
        }
    }

    pub fn steps(&self) -> usize {
        self.days * 1440 / self.dt_minutes as usize
    }
}

/// The process the generator samples from, usable as an oracle estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
}

impl GroundTruth {
    fn bin(&self, g: u32) -> usize {
        self.config.sojourn_bin_edges.partition_point(|&e| e <= g) - 1
    }

    pub fn p_start(&self, slot: usize, hour: u8, weekday: u8, sojourn: u32) -> f64 {
        let c = &self.config;
        let s = c.slot_scale.get(slot).copied().unwrap_or(1.0);
        let w = c.weekday_scale.get(weekday as usize).copied().unwrap_or(1.0);
        (c.arrival_hourly[hour as usize % 24] * s * w * c.arrival_sojourn_factor[self.bin(sojourn)]).clamp(0.0, 1.0)
    }

    pub fn p_end(&self, sojourn: u32) -> f64 {
        self.config.end_hazard[self.bin(sojourn)].clamp(0.0, 1.0)
    }
}

impl TransitionEstimator for GroundTruth {
    fn switch_probability(&self, ctx: &TransitionContext) -> f64 {
        if ctx.prev_active {
            self.p_end(ctx.sojourn_steps)
        } else {
            self.p_start(ctx.slot, ctx.hour, ctx.weekday, ctx.sojourn_steps)
        }
    }

    fn predict_kwh(&self, _ctx: &TransitionContext) -> f64 {
        self.config.request.mean()
    }
}

pub fn slot_name(i: usize) -> String {
    format!("S{i:02}")
}

/// Draw sessions from the configured process. Each slot has its own random
/// stream, so adding slots does not perturb existing ones.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<(Vec<RawSession>, GroundTruth), DataError> {
    config.validate()?;
    let truth = GroundTruth { config: config.clone() };
    let clock = config.clock();
    let total = config.steps();
    let dt = config.dt_minutes as i64;
    let mut sessions = Vec::new();
    for slot in 0..config.n_slots {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &[0x5e55, slot as u64]));
        let mut t = 0usize;
        let mut g = 0u32;
        while t < total {
            let p = truth.p_start(slot, clock.hour(t), clock.weekday(t), g);
            if !rng.gen_bool(p) {
                t += 1;
                g += 1;
                continue;
            }
            let kwh = config.request.draw(&mut rng);
            // chargeable steps until the end draw succeeds
            let mut d = 1u32;
            while !rng.gen_bool(truth.p_end(d - 1)) {
                d += 1;
                if d > 10_000 {
                    break;
                }
            }
            let gap = if rng.gen_bool(config.early_probability) {
                rng.gen_range(config.early_gap_steps.0..=config.early_gap_steps.1)
            } else {
                0
            };
            let offset = if config.jitter { rng.gen_range(0..dt * 60) } else { 0 };
            let connection = clock.datetime(t) + Duration::seconds(offset);
            sessions.push(RawSession {
                slot_id: slot_name(slot),
                connection_time: connection,
                disconnection_time: connection + Duration::minutes(d as i64 * dt),
                kwh,
                announced_minutes: Some((d + gap) * config.dt_minutes),
            });
            t += d as usize + 1;
            g = 0;
        }
    }
    sessions.sort_by(|a, b| a.connection_time.cmp(&b.connection_time).then_with(|| a.slot_id.cmp(&b.slot_id)));
    Ok((sessions, truth))
}
