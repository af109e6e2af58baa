use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: column `{0}` not found in header")]
    Schema(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid record on {date}: {message}")]
    InvalidRecord { date: NaiveDate, message: String },

    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),

    #[error("continuity error: {} missing day(s): {}", .missing.len(), format_dates(.missing))]
    Continuity { missing: Vec<NaiveDate> },

    #[error("split spec error: {0}")]
    SplitSpec(String),

    #[error("insufficient data: need at least {required} timesteps, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("parameter `{name}` shape mismatch: model {model:?}, archive {archive:?}")]
    WeightShape {
        name: String,
        model: Vec<usize>,
        archive: Vec<usize>,
    },

    #[error("weight archive error: {0}")]
    Archive(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("registry integrity error at record {index}: {message}")]
    Integrity { index: usize, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn format_dates(dates: &[NaiveDate]) -> String {
    const SHOWN: usize = 10;
    let mut s = dates
        .iter()
        .take(SHOWN)
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    if dates.len() > SHOWN {
        s.push_str(&format!(", ... (+{})", dates.len() - SHOWN));
    }
    s
}
