//! Raw session logs: a delimited-text schema and ACN-style JSON exports.
//!
//! CSV columns: `slot_id,connection_time,disconnection_time,kwh,announced_minutes`.
//! The last column may be empty. Timestamps are RFC 3339 (any offset) or naive
//! `YYYY-MM-DD HH:MM:SS`, which is taken to be station local time already.

use std::path::Path;

use chrono::{DateTime, Duration, FixedOffset, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSession {
    pub slot_id: String,
    pub connection_time: NaiveDateTime,
    pub disconnection_time: NaiveDateTime,
    pub kwh: f64,
    pub announced_minutes: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionFormat {
    Csv,
    AcnJson,
}

impl std::str::FromStr for SessionFormat {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, DataError> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "acn" | "json" | "acn-json" => Ok(Self::AcnJson),
            other => Err(DataError::Config(format!("unknown session format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParseOptions {
    /// Offset of station local time from UTC; zoned timestamps are shifted to it.
    pub utc_offset_minutes: i32,
    /// Share of malformed rows above which parsing fails outright.
    pub max_malformed_fraction: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            utc_offset_minutes: 0,
            max_malformed_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based record number, header excluded.
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub sessions: Vec<RawSession>,
    pub rejected: Vec<RowError>,
}

fn parse_time(s: &str, offset: FixedOffset) -> Result<NaiveDateTime, String> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&offset).naive_local());
    }
    if let Ok(t) = DateTime::parse_from_rfc2822(s) {
        return Ok(t.with_timezone(&offset).naive_local());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t);
        }
    }
    Err(format!("unrecognized timestamp '{s}'"))
}

fn check(session: RawSession) -> Result<RawSession, String> {
    if session.disconnection_time <= session.connection_time {
        return Err("disconnection is not after connection".into());
    }
    if !(session.kwh >= 0.0 && session.kwh.is_finite()) {
        return Err(format!("invalid energy {}", session.kwh));
    }
    if session.announced_minutes == Some(0) {
        return Err("announced duration must be positive".into());
    }
    if session.slot_id.is_empty() {
        return Err("empty slot id".into());
    }
    Ok(session)
}

fn finish(total: usize, mut report: ParseReport, opts: &ParseOptions) -> Result<ParseReport, DataError> {
    if total > 0 && report.rejected.len() as f64 > opts.max_malformed_fraction * total as f64 {
        return Err(DataError::TooManyMalformed {
            bad: report.rejected.len(),
            total,
            first: report.rejected.first().cloned(),
        });
    }
    report
        .sessions
        .sort_by(|a, b| a.connection_time.cmp(&b.connection_time).then_with(|| a.slot_id.cmp(&b.slot_id)));
    Ok(report)
}

fn offset(opts: &ParseOptions) -> Result<FixedOffset, DataError> {
    FixedOffset::east_opt(opts.utc_offset_minutes * 60).ok_or_else(|| DataError::Config(format!("bad utc offset {}", opts.utc_offset_minutes)))
}

pub fn parse_csv(text: &str, opts: &ParseOptions) -> Result<ParseReport, DataError> {
    let tz = offset(opts)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(text.as_bytes());
    let mut report = ParseReport::default();
    let mut total = 0;
    for (i, rec) in rdr.records().enumerate() {
        total += 1;
        let row = i + 1;
        let parsed = rec.map_err(|e| e.to_string()).and_then(|r| {
            if r.len() < 4 {
                return Err(format!("expected at least 4 columns, got {}", r.len()));
            }
            let announced = match r.get(4).map(str::trim) {
                None | Some("") => None,
                Some(v) => Some(v.parse::<u32>().map_err(|_| format!("bad announced minutes '{v}'"))?),
            };
            check(RawSession {
                slot_id: r[0].to_string(),
                connection_time: parse_time(&r[1], tz)?,
                disconnection_time: parse_time(&r[2], tz)?,
                kwh: r[3].parse().map_err(|_| format!("bad energy '{}'", &r[3]))?,
                announced_minutes: announced,
            })
        });
        match parsed {
            Ok(s) => report.sessions.push(s),
            Err(message) => report.rejected.push(RowError { row, message }),
        }
    }
    finish(total, report, opts)
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct AcnUserInput {
    minutes_available: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum AcnUserInputs {
    One(AcnUserInput),
    Many(Vec<AcnUserInput>),
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct AcnRecord {
    #[serde(rename = "spaceID")]
    space_id: String,
    connection_time: String,
    #[serde(alias = "disconnectTime")]
    disconnection_time: String,
    #[serde(rename = "kWhDelivered")]
    kwh_delivered: f64,
    #[serde(default)]
    user_inputs: Option<AcnUserInputs>,
}

pub fn parse_acn_json(text: &str, opts: &ParseOptions) -> Result<ParseReport, DataError> {
    let tz = offset(opts)?;
    let root: serde_json::Value = serde_json::from_str(text).map_err(|e| DataError::Json(e.to_string()))?;
    let items = match &root {
        serde_json::Value::Array(a) => a.clone(),
        serde_json::Value::Object(o) => match o.get("_items") {
            Some(serde_json::Value::Array(a)) => a.clone(),
            _ => return Err(DataError::Json("expected an array or an object with '_items'".into())),
        },
        _ => return Err(DataError::Json("expected an array or an object with '_items'".into())),
    };
    let mut report = ParseReport::default();
    for (i, item) in items.iter().enumerate() {
        let row = i + 1;
        let parsed = serde_json::from_value::<AcnRecord>(item.clone()).map_err(|e| e.to_string()).and_then(|r| {
            let minutes = match &r.user_inputs {
                Some(AcnUserInputs::One(u)) => u.minutes_available,
                Some(AcnUserInputs::Many(v)) => v.last().and_then(|u| u.minutes_available),
                None => None,
            };
            let announced = match minutes {
                Some(m) if m >= 1.0 && m.is_finite() => Some(m.round() as u32),
                Some(m) => return Err(format!("bad minutesAvailable {m}")),
                None => None,
            };
            check(RawSession {
                slot_id: r.space_id,
                connection_time: parse_time(&r.connection_time, tz)?,
                disconnection_time: parse_time(&r.disconnection_time, tz)?,
                kwh: r.kwh_delivered,
                announced_minutes: announced,
            })
        });
        match parsed {
            Ok(s) => report.sessions.push(s),
            Err(message) => report.rejected.push(RowError { row, message }),
        }
    }
    finish(items.len(), report, opts)
}

pub fn parse_sessions(path: &Path, format: SessionFormat, opts: &ParseOptions) -> Result<ParseReport, DataError> {
    let text = std::fs::read_to_string(path)?;
    match format {
        SessionFormat::Csv => parse_csv(&text, opts),
        SessionFormat::AcnJson => parse_acn_json(&text, opts),
    }
}

/// Write sessions in the CSV schema accepted by [`parse_csv`].
pub fn write_csv(sessions: &[RawSession], out: impl std::io::Write) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slot_id", "connection_time", "disconnection_time", "kwh", "announced_minutes"])
        .map_err(|e| DataError::Csv(e.to_string()))?;
    for s in sessions {
        let fmt = "%Y-%m-%d %H:%M:%S";
        w.write_record([
            s.slot_id.clone(),
            s.connection_time.format(fmt).to_string(),
            s.disconnection_time.format(fmt).to_string(),
            s.kwh.to_string(),
            s.announced_minutes.map(|m| m.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| DataError::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Parking duration of a session in whole minutes, rounded up.
pub fn duration_minutes(s: &RawSession) -> i64 {
    let d: Duration = s.disconnection_time - s.connection_time;
    (d.num_seconds() + 59) / 60
}
