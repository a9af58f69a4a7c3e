//! Discretized event traces and their on-disk format.
//!
//! A trace file is line oriented:
//!
//! ```text
//! evcs-trace 1
//! {"epoch":"2024-03-04","dt_minutes":15,"steps":672,"slots":["A1","A2"]}
//! step,slot,a,q,k,delta
//! 37,0,1,0,6.5,8
//! 45,0,0,1,0,0
//! ```
//!
//! Only non-empty events are listed. Step 0 is midnight of `epoch`.

use std::io::{BufRead, Write};

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::station::{ExogenousInput, SlotEvent};

pub const TRACE_MAGIC: &str = "evcs-trace 1";

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("inconsistent trace at step {t}, slot {slot}: {msg}")]
    Inconsistent { t: usize, slot: usize, msg: String },
}

/// Maps step indices to calendar time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clock {
    pub epoch: NaiveDate,
    pub dt_minutes: u32,
}

impl Clock {
    pub fn datetime(&self, t: usize) -> NaiveDateTime {
        self.epoch.and_hms_opt(0, 0, 0).expect("midnight") + Duration::minutes(t as i64 * self.dt_minutes as i64)
    }

    pub fn hour(&self, t: usize) -> u8 {
        ((t * self.dt_minutes as usize / 60) % 24) as u8
    }

    /// Monday is 0.
    pub fn weekday(&self, t: usize) -> u8 {
        let day = t * self.dt_minutes as usize / 1440;
        ((self.epoch.weekday().num_days_from_monday() as usize + day) % 7) as u8
    }

    pub fn step_of(&self, at: NaiveDateTime) -> i64 {
        let start = self.epoch.and_hms_opt(0, 0, 0).expect("midnight");
        (at - start).num_seconds().div_euclid(self.dt_minutes as i64 * 60)
    }
}

/// One session as replayed from a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub slot: usize,
    /// Step carrying the start event; first chargeable step is `start_step + 1`.
    pub start_step: usize,
    /// Step during which the session ends, `None` if still running at trace end.
    pub end_step: Option<usize>,
    pub request_kwh: f64,
    pub announced_steps: u32,
}

impl SessionRecord {
    /// Number of chargeable steps inside the trace.
    pub fn chargeable_steps(&self, trace_len: usize) -> usize {
        let last = self.end_step.unwrap_or(trace_len.saturating_sub(1));
        last.saturating_sub(self.start_step)
    }

    /// Ended through a disconnection before the announced time elapsed.
    pub fn is_early(&self) -> bool {
        self.end_step.is_some_and(|e| e - self.start_step < self.announced_steps as usize)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    epoch: NaiveDate,
    dt_minutes: u32,
    steps: usize,
    slots: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedTrace {
    pub clock: Clock,
    pub slot_names: Vec<String>,
    pub steps: Vec<ExogenousInput>,
    pub sessions: Vec<SessionRecord>,
}

impl DiscretizedTrace {
    /// Build from per-step events, replaying them to recover sessions.
    pub fn from_events(clock: Clock, slot_names: Vec<String>, steps: Vec<ExogenousInput>) -> Result<Self, TraceError> {
        let sessions = replay_sessions(slot_names.len(), &steps)?;
        Ok(Self {
            clock,
            slot_names,
            steps,
            sessions,
        })
    }

    pub fn n_slots(&self) -> usize {
        self.slot_names.len()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Render session records back into per-step events. A record whose end
    /// coincides with its announced expiry needs no explicit end event.
    pub fn from_sessions(clock: Clock, slot_names: Vec<String>, len: usize, records: &[SessionRecord]) -> Result<Self, TraceError> {
        let n = slot_names.len();
        let mut steps: Vec<ExogenousInput> = (0..len).map(|t| ExogenousInput::empty(t, n)).collect();
        for r in records {
            if r.slot >= n || r.start_step >= len {
                return Err(TraceError::Inconsistent {
                    t: r.start_step,
                    slot: r.slot,
                    msg: "session outside the trace".into(),
                });
            }
            steps[r.start_step].events[r.slot] = SlotEvent::start(r.request_kwh, r.announced_steps);
            if let Some(e) = r.end_step {
                if e < len && e != r.start_step + r.announced_steps as usize {
                    steps[e].events[r.slot] = SlotEvent::end();
                }
            }
        }
        Self::from_events(clock, slot_names, steps)
    }

    /// Steps `[from, to)` rebased to start at 0, keeping the sessions that
    /// start inside the window. `from` must fall on a midnight.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self, TraceError> {
        let per_day = 1440 / self.clock.dt_minutes as usize;
        if !from.is_multiple_of(per_day) {
            return Err(TraceError::Format {
                line: 0,
                msg: format!("slice start {from} is not a midnight"),
            });
        }
        let to = to.min(self.len()).max(from);
        let records: Vec<SessionRecord> = self
            .sessions
            .iter()
            .filter(|s| s.start_step >= from && s.start_step < to)
            .map(|s| SessionRecord {
                start_step: s.start_step - from,
                end_step: s.end_step.filter(|&e| e < to).map(|e| e - from),
                ..*s
            })
            .collect();
        let clock = Clock {
            epoch: self.clock.epoch + Duration::days((from / per_day) as i64),
            dt_minutes: self.clock.dt_minutes,
        };
        Self::from_sessions(clock, self.slot_names.clone(), to - from, &records)
    }

    pub fn write(&self, out: &mut impl Write) -> Result<(), TraceError> {
        writeln!(out, "{TRACE_MAGIC}")?;
        let header = Header {
            epoch: self.clock.epoch,
            dt_minutes: self.clock.dt_minutes,
            steps: self.steps.len(),
            slots: self.slot_names.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        writeln!(out, "step,slot,a,q,k,delta")?;
        for w in &self.steps {
            for (i, ev) in w.events.iter().enumerate() {
                if !ev.is_empty() {
                    writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        w.t, i, ev.start as u8, ev.end as u8, ev.request_kwh, ev.announced_duration_steps
                    )?;
                }
            }
        }
        Ok(())
    }

    pub fn read(input: impl BufRead) -> Result<Self, TraceError> {
        let mut lines = input.lines();
        let mut next = |n: usize| -> Result<String, TraceError> {
            lines.next().transpose()?.ok_or(TraceError::Format {
                line: n,
                msg: "unexpected end of file".into(),
            })
        };
        let magic = next(1)?;
        if magic.trim() != TRACE_MAGIC {
            return Err(TraceError::Format {
                line: 1,
                msg: format!("expected '{TRACE_MAGIC}', found '{magic}'"),
            });
        }
        let header: Header = serde_json::from_str(&next(2)?).map_err(|e| TraceError::Format { line: 2, msg: e.to_string() })?;
        let _columns = next(3)?;
        let n = header.slots.len();
        let mut steps: Vec<ExogenousInput> = (0..header.steps).map(|t| ExogenousInput::empty(t, n)).collect();
        let mut lineno = 3;
        loop {
            lineno += 1;
            let line = match next(lineno) {
                Ok(l) => l,
                Err(TraceError::Format { .. }) => break,
                Err(e) => return Err(e),
            };
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| TraceError::Format {
                line: lineno,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            let t: usize = f[0].parse().map_err(|_| bad("bad step"))?;
            let slot: usize = f[1].parse().map_err(|_| bad("bad slot"))?;
            if t >= steps.len() || slot >= n {
                return Err(bad("step or slot out of range"));
            }
            let flag = |s: &str| match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(bad("flags must be 0 or 1")),
            };
            steps[t].events[slot] = SlotEvent {
                start: flag(f[2])?,
                end: flag(f[3])?,
                request_kwh: f[4].parse().map_err(|_| bad("bad k"))?,
                announced_duration_steps: f[5].parse().map_err(|_| bad("bad delta"))?,
            };
        }
        let clock = Clock {
            epoch: header.epoch,
            dt_minutes: header.dt_minutes,
        };
        Self::from_events(clock, header.slots, steps)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), TraceError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TraceError> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }
}

/// Replay start/end/announced-time rules to recover session records, and
/// check that the events are legal for the station dynamics.
pub fn replay_sessions(n: usize, steps: &[ExogenousInput]) -> Result<Vec<SessionRecord>, TraceError> {
    let mut open: Vec<Option<(SessionRecord, u32)>> = vec![None; n];
    let mut done = Vec::new();
    for (t, w) in steps.iter().enumerate() {
        if w.events.len() != n {
            return Err(TraceError::Inconsistent {
                t,
                slot: 0,
                msg: "wrong number of slots".into(),
            });
        }
        for (i, ev) in w.events.iter().enumerate() {
            if ev.start && ev.end {
                return Err(TraceError::Inconsistent {
                    t,
                    slot: i,
                    msg: "start and end on the same step".into(),
                });
            }
            if let Some((rec, m)) = open[i] {
                if ev.end || m == 1 {
                    done.push(SessionRecord { end_step: Some(t), ..rec });
                    open[i] = None;
                }
            }
            if ev.start {
                if open[i].is_some() {
                    return Err(TraceError::Inconsistent {
                        t,
                        slot: i,
                        msg: "start on an active slot".into(),
                    });
                }
                if !(ev.request_kwh > 0.0) || ev.announced_duration_steps == 0 {
                    return Err(TraceError::Inconsistent {
                        t,
                        slot: i,
                        msg: "start needs k > 0 and delta >= 1".into(),
                    });
                }
                let rec = SessionRecord {
                    slot: i,
                    start_step: t,
                    end_step: None,
                    request_kwh: ev.request_kwh,
                    announced_steps: ev.announced_duration_steps,
                };
                // decremented below, so store delta + 1
                open[i] = Some((rec, ev.announced_duration_steps + 1));
            }
        }
        for o in open.iter_mut().flatten() {
            o.1 -= 1;
        }
    }
    done.extend(open.into_iter().flatten().map(|(r, _)| r));
    done.sort_by_key(|s| (s.start_step, s.slot));
    Ok(done)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clock() -> Clock {
        Clock {
            epoch: NaiveDate::from_ymd_opt(2024, 3, 5).unwrap(),
            dt_minutes: 15,
        }
    }

    fn sample() -> DiscretizedTrace {
        let mut steps: Vec<ExogenousInput> = (0..200).map(|t| ExogenousInput::empty(t, 2)).collect();
        steps[3].events[0] = SlotEvent::start(6.5, 8);
        steps[7].events[0] = SlotEvent::end();
        steps[7].events[1] = SlotEvent::start(1.0 / 3.0, 2);
        steps[100].events[0] = SlotEvent::start(2.0, 200);
        DiscretizedTrace::from_events(clock(), vec!["A".into(), "B".into()], steps).unwrap()
    }

    #[test]
    fn clock_fields() {
        let c = clock();
        assert_eq!(c.weekday(0), 1);
        assert_eq!(c.hour(37), 9);
        assert_eq!(c.weekday(96 * 6), 0);
        assert_eq!(c.step_of(c.datetime(37) + Duration::minutes(7)), 37);
    }

    #[test]
    fn replay_recovers_sessions() {
        let t = sample();
        assert_eq!(t.sessions.len(), 3);
        assert_eq!(t.sessions[0].end_step, Some(7));
        assert!(t.sessions[0].is_early());
        // announced expiry: start at 7 with delta 2 ends during step 9
        assert_eq!(t.sessions[1].end_step, Some(9));
        assert!(!t.sessions[1].is_early());
        assert_eq!(t.sessions[2].end_step, None);
    }

    #[test]
    fn file_round_trip_is_exact() {
        let t = sample();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let back = DiscretizedTrace::read(&buf[..]).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.steps[7].events[1].request_kwh, 1.0 / 3.0);
    }

    #[test]
    fn rejects_start_on_active_slot() {
        let mut steps: Vec<ExogenousInput> = (0..10).map(|t| ExogenousInput::empty(t, 1)).collect();
        steps[1].events[0] = SlotEvent::start(1.0, 5);
        steps[2].events[0] = SlotEvent::start(1.0, 5);
        assert!(DiscretizedTrace::from_events(clock(), vec!["A".into()], steps).is_err());
    }

    #[test]
    fn malformed_file_reports_line() {
        let text = format!("{TRACE_MAGIC}\n{{\"epoch\":\"2024-03-05\",\"dt_minutes\":15,\"steps\":4,\"slots\":[\"A\"]}}\nstep,slot,a,q,k,delta\n1,0,2,0,1,1\n");
        match DiscretizedTrace::read(text.as_bytes()) {
            Err(TraceError::Format { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn slice_drops_straddling_sessions() {
        let t = sample();
        let s = t.slice(96, 200).unwrap();
        assert_eq!(s.len(), 104);
        assert_eq!(s.clock.epoch, NaiveDate::from_ymd_opt(2024, 3, 6).unwrap());
        assert_eq!(s.sessions.len(), 1);
        assert_eq!(s.sessions[0].start_step, 4);
    }
}
