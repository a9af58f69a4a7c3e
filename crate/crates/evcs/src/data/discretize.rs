//! Raw sessions to step-indexed traces, request capping and train/test split.

use chrono::{Duration, NaiveDate};

use super::parse::{duration_minutes, RawSession};
use super::DataError;
use crate::station::StationConfig;
use crate::trace::{Clock, DiscretizedTrace, SessionRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizeOptions {
    pub dt_minutes: u32,
    /// Maximum number of slots; more distinct ids is an error.
    pub n_slots: usize,
    /// Fixed slot ordering. When empty, ids are sorted and numbered.
    pub slot_names: Vec<String>,
    /// First day of the trace; defaults to the day of the earliest connection.
    pub epoch: Option<NaiveDate>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiscretizeReport {
    /// Sessions shortened because a later session on the same slot began first.
    pub truncated: usize,
    /// Sessions dropped because truncation left no chargeable step.
    pub dropped: usize,
    /// Sessions skipped because they carry no energy.
    pub empty: usize,
}

/// Place each session on the step grid.
///
/// The start event goes to the step containing the connection; the end goes to
/// the earlier of the disconnection step and the announced expiry, and never
/// before the first chargeable step.
pub fn discretize(sessions: &[RawSession], opts: &DiscretizeOptions) -> Result<(DiscretizedTrace, DiscretizeReport), DataError> {
    let dt = opts.dt_minutes;
    if dt == 0 || 60 % dt != 0 {
        return Err(DataError::Config(format!("dt_minutes {dt} must divide 60")));
    }
    let mut names = opts.slot_names.clone();
    if names.is_empty() {
        names = sessions.iter().map(|s| s.slot_id.clone()).collect();
        names.sort();
        names.dedup();
    }
    if names.len() > opts.n_slots {
        return Err(DataError::TooManySlots {
            found: names.len(),
            n: opts.n_slots,
        });
    }
    let epoch = match opts.epoch {
        Some(d) => d,
        None => match sessions.iter().map(|s| s.connection_time).min() {
            Some(t) => t.date(),
            None => NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date"),
        },
    };
    let clock = Clock { epoch, dt_minutes: dt };

    let mut report = DiscretizeReport::default();
    let mut per_slot: Vec<Vec<SessionRecord>> = vec![Vec::new(); names.len()];
    for s in sessions {
        let slot = names
            .iter()
            .position(|n| *n == s.slot_id)
            .ok_or_else(|| DataError::UnknownSlot(s.slot_id.clone()))?;
        let start = clock.step_of(s.connection_time);
        if start < 0 {
            return Err(DataError::Config(format!("session on {} starts before the epoch", s.slot_id)));
        }
        if !(s.kwh > 0.0) {
            report.empty += 1;
            continue;
        }
        let start = start as usize;
        let minutes = s.announced_minutes.map(i64::from).unwrap_or_else(|| duration_minutes(s));
        let delta = ((minutes + dt as i64 - 1) / dt as i64).max(1) as usize;
        let actual = clock.step_of(s.disconnection_time).max(0) as usize;
        let end = actual.min(start + delta).max(start + 1);
        per_slot[slot].push(SessionRecord {
            slot,
            start_step: start,
            end_step: Some(end),
            request_kwh: s.kwh,
            announced_steps: delta as u32,
        });
    }

    let mut records = Vec::new();
    for (slot, list) in per_slot.iter_mut().enumerate() {
        list.sort_by_key(|r| (r.start_step, r.end_step));
        let mut kept: Vec<SessionRecord> = Vec::with_capacity(list.len());
        for next in list.iter() {
            while let Some(prev) = kept.last_mut() {
                let end = prev.end_step.expect("set above");
                let expiry = prev.start_step + prev.announced_steps as usize;
                // an expiry end may share its step with the next start
                if next.start_step > end || (next.start_step == end && end == expiry) {
                    break;
                }
                if next.start_step > prev.start_step + 1 {
                    log::warn!(
                        "slot {}: session at step {} truncated by the one at step {}",
                        names[slot],
                        prev.start_step,
                        next.start_step
                    );
                    prev.end_step = Some(next.start_step - 1);
                    report.truncated += 1;
                    break;
                }
                log::warn!("slot {}: session at step {} dropped, overlapped immediately", names[slot], prev.start_step);
                kept.pop();
                report.dropped += 1;
            }
            kept.push(*next);
        }
        records.extend(kept);
    }
    let last = records.iter().filter_map(|r| r.end_step).max().map_or(0, |e| e + 1);
    let per_day = (1440 / dt) as usize;
    let len = last.div_ceil(per_day) * per_day;
    let trace = DiscretizedTrace::from_sessions(clock, names, len, &records)?;
    Ok((trace, report))
}

/// Cap each request at what the announced window can deliver, dropping
/// requests that round to nothing. Returns the new trace and the drop count.
pub fn preprocess_requests(trace: &DiscretizedTrace, config: &StationConfig) -> Result<(DiscretizedTrace, usize), DataError> {
    let mut dropped = 0;
    let records: Vec<SessionRecord> = trace
        .sessions
        .iter()
        .filter_map(|s| {
            let cap = s.announced_steps as f64 * config.e_max * config.eta;
            let k = s.request_kwh.min(cap);
            if k <= 1e-6 {
                dropped += 1;
                None
            } else {
                Some(SessionRecord { request_kwh: k, ..*s })
            }
        })
        .collect();
    let out = DiscretizedTrace::from_sessions(trace.clock, trace.slot_names.clone(), trace.len(), &records)?;
    Ok((out, dropped))
}

/// Chronological split at midnight of `boundary`. Sessions belong to the side
/// holding their connection; the training side is extended so that sessions
/// straddling the boundary keep their full length.
pub fn split(trace: &DiscretizedTrace, boundary: NaiveDate) -> Result<(DiscretizedTrace, DiscretizedTrace), DataError> {
    let per_day = 1440 / trace.clock.dt_minutes as usize;
    let days = (boundary - trace.clock.epoch).num_days();
    let b = days * per_day as i64;
    if days < 0 || b as usize > trace.len() {
        return Err(DataError::Boundary {
            boundary,
            first: trace.clock.epoch,
            last: trace.clock.datetime(trace.len()).date(),
        });
    }
    let b = b as usize;
    let train_records: Vec<SessionRecord> = trace.sessions.iter().filter(|s| s.start_step < b).copied().collect();
    let train_len = train_records
        .iter()
        .map(|s| s.end_step.map_or(trace.len(), |e| e + 1))
        .max()
        .unwrap_or(0)
        .max(b);
    let train = DiscretizedTrace::from_sessions(trace.clock, trace.slot_names.clone(), train_len, &train_records)?;
    let test = trace.slice(b, trace.len())?;
    debug_assert_eq!(test.clock.epoch, trace.clock.epoch + Duration::days(days));
    Ok((train, test))
}
