use std::path::PathBuf;

use thiserror::Error;

/// Netpbm parse failures.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum PnmError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0} (only 255 is accepted)")]
    UnsupportedMaxval(u32),
    #[error("truncated payload: expected {expected} samples, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("sample value {0} exceeds maxval")]
    SampleOutOfRange(u32),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Pnm(#[from] PnmError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parameter table: {0}")]
    Table(String),
    #[error("wavelength is singular at normalized tone {0}")]
    SingularWavelength(f64),
    #[error("infeasible target counts: level {level} has {count} dots, fewer than level {prev}")]
    InfeasibleCounts { level: usize, prev: usize, count: usize },
    #[error("objective returned a non-finite cost ({0})")]
    NonFiniteCost(f64),
    #[error("missing ground truth for tone {0}")]
    MissingGroundTruth(u8),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
