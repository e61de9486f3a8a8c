use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, malformed, or violates an invariant.
    #[error("invalid config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(
        "index out of range in table {table}, segment {segment}, position {position}: \
         row {row} >= {rows}"
    )]
    IndexOutOfRange {
        table: usize,
        segment: usize,
        position: usize,
        row: u64,
        rows: u64,
    },

    #[error("table budget too small: {0}")]
    BudgetTooSmall(String),

    #[error("stream/length mismatch: {0}")]
    StreamMismatch(String),

    #[error("event log incomplete: {0}")]
    MissingStage(String),

    #[error("invalid model blob: {0}")]
    Format(String),

    #[error("{0}")]
    Invalid(String),

    /// The accelerator disagreed with the reference engine.
    #[error(
        "verification failed in trial {trial}: {quantity} for sample {sample}{}, element {element}: \
         engine {got:e} vs reference {want:e}",
        table.map(|t| format!(", table {t}")).unwrap_or_default()
    )]
    Mismatch {
        trial: usize,
        quantity: &'static str,
        sample: usize,
        table: Option<usize>,
        element: usize,
        got: f32,
        want: f32,
    },

    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: io::Error },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by user-supplied configuration rather than IO.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::Parse { .. } | Error::BudgetTooSmall(_)
        )
    }

    /// Wraps an IO error with the path it concerns.
    pub fn file(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| Error::File { path, source }
    }
}
