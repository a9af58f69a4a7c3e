//! Session logs in, step traces out.

mod discretize;
mod parse;
mod synth;

pub use discretize::{discretize, preprocess_requests, split, DiscretizeOptions, DiscretizeReport};
pub use parse::{parse_acn_json, parse_csv, parse_sessions, write_csv, ParseOptions, ParseReport, RawSession, RowError, SessionFormat};
pub use synth::{generate_synthetic, slot_name, GroundTruth, RequestDistribution, SynthConfig};

use chrono::NaiveDate;

use crate::trace::TraceError;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("{bad} of {total} rows malformed (first: {first:?})")]
    TooManyMalformed { bad: usize, total: usize, first: Option<RowError> },
    #[error("{found} distinct slots but the station has {n}")]
    TooManySlots { found: usize, n: usize },
    #[error("unknown slot id '{0}'")]
    UnknownSlot(String),
    #[error("split boundary {boundary} outside trace range {first}..{last}")]
    Boundary { boundary: NaiveDate, first: NaiveDate, last: NaiveDate },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}
