use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by [`ErrorKind`] so the CLI can map them onto exit
/// codes without string matching.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config error: {0}")]
    Config(String),

    #[error("unparseable numeric cell {value:?} at row {row}, column {column:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("missing target value at row {row}")]
    MissingTarget { row: usize },
    #[error("non-binary target {value:?} at row {row}")]
    NonBinaryTarget { row: usize, value: String },
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("column {0:?} not found")]
    UnknownColumn(String),
    #[error("dataset has zero data rows")]
    NoRows,
    #[error("column {0} has no observed cells")]
    FullyMissingColumn(usize),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("class {class} has {count} members, fewer than the {required} required")]
    ClassTooSmall {
        class: u8,
        count: usize,
        required: usize,
    },
    #[error("training data contains a single class")]
    SingleClass,
    #[error("nothing was amputed")]
    NothingAmputed,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty pipeline pool")]
    EmptyPool,
    #[error("duplicate pipeline label {0:?}")]
    DuplicateLabel(String),
    #[error("pipeline {0:?} has no stage-2 cache; build the error matrix first")]
    Unfitted(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("did not converge: {0}")]
    NoConvergence(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::EmptyPool | Error::DuplicateLabel(_) => {
                ErrorKind::Config
            }
            Error::Io { .. }
            | Error::Csv(_)
            | Error::Parse { .. }
            | Error::MissingTarget { .. }
            | Error::NonBinaryTarget { .. }
            | Error::DuplicateColumn(_)
            | Error::UnknownColumn(_)
            | Error::NoRows
            | Error::FullyMissingColumn(_)
            | Error::DimensionMismatch { .. }
            | Error::ClassTooSmall { .. }
            | Error::SingleClass
            | Error::NothingAmputed => ErrorKind::Data,
            Error::Json(_) | Error::Unfitted(_) | Error::NonFinite(_) | Error::NoConvergence(_) | Error::Invariant(_) => {
                ErrorKind::Runtime
            }
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Runtime => 4,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
