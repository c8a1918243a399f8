use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input data or configuration.
    Input,
    /// The statistics could not be computed (separation, non-convergence, ...).
    Statistical,
    /// A strict overlap or balance gate fired.
    Gate,
}

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

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing column `{0}` in input header")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: {message}")]
    Ingest {
        row: usize,
        column: String,
        message: String,
    },

    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("covariate `{covariate}` has level `{level}` outside its declared level set")]
    UnknownLevel { covariate: String, level: String },

    #[error("moderator stratum {0} is empty")]
    EmptyStratum(u8),

    #[error("cell treatment={treatment}, moderator={moderator} has {count} rows; at least 2 are required")]
    SparseCell {
        treatment: u8,
        moderator: u8,
        count: usize,
    },

    #[error("{0} vector contains a single class; both 0 and 1 are required")]
    SingleClass(&'static str),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("balance undefined for `{0}`: zero pooled standard deviation with unequal group means")]
    UndefinedBalance(String),

    #[error("design matrix is rank deficient; aliased columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("separation detected in logistic fit (coefficient `{term}` diverging to {value:.3e})")]
    Separation { term: String, value: f64 },

    #[error("IRLS failed to converge after {iterations} iterations (last max score/n {score:.3e})")]
    NonConvergence { iterations: usize, score: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("overlap violations present and strict overlap requested: {0}")]
    OverlapAbort(String),

    #[error("post-weighting balance flags fired and strict balance requested: {0}")]
    BalanceAbort(String),
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
            Error::UndefinedBalance(_)
            | Error::RankDeficient(_)
            | Error::Separation { .. }
            | Error::NonConvergence { .. }
            | Error::Singular(_)
            | Error::Degenerate(_)
            | Error::SingleClass(_) => ErrorKind::Statistical,
            Error::OverlapAbort(_) | Error::BalanceAbort(_) => ErrorKind::Gate,
            _ => ErrorKind::Input,
        }
    }
}
