use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report. Variants are grouped by the exit
/// code class they map to in the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Data(#[from] DataError),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error(transparent)]
    Load(#[from] LoadError),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("model is incompatible with this run: {0}")]
    Incompatible(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Contract(_) => "contract",
            Error::Config { .. } => "config",
            Error::Data(_) => "data",
            Error::Divergence { .. } => "divergence",
            Error::Load(_) => "load",
            Error::Domain(_) => "domain",
            Error::Incompatible(_) => "incompatible",
            Error::Io { .. } => "io",
        }
    }
}

/// Problems with input series and datasets.
#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("row {row}: malformed record: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),

    #[error("{date}: non-positive price")]
    NonPositivePrice { date: NaiveDate },

    #[error("{date}: OHLC ordering violated (low <= open/close <= high)")]
    OhlcOrder { date: NaiveDate },

    #[error("degenerate normalization range: all values equal {0}")]
    DegenerateRange(f64),

    #[error("not enough trading days: need at least {required}, found {found}")]
    TooShort { required: usize, found: usize },

    #[error("empty dataset")]
    Empty,

    #[error("missing forecast for {0}")]
    MissingForecast(NaiveDate),

    #[error("batch norm needs at least 2 values per channel in train mode, got {0}")]
    DegenerateBatch(usize),
}

/// Model container failures; each is distinct so callers can tell a stale
/// file from a damaged one.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("not a model file (bad magic)")]
    BadMagic,

    #[error("unsupported schema version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("file truncated inside the header")]
    Truncated,

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("checksum mismatch: header says {expected}, blob hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
}
