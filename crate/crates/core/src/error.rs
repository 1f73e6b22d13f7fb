use thiserror::Error;

/// Errors raised by the toolkit's computational modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("prompt `{prompt_id}` has no usable tokens")]
    EmptyPrompt { prompt_id: String },

    #[error("prompt `{prompt_id}`: malformed log-probability at position {position}: {reason}")]
    MalformedScore {
        prompt_id: String,
        position: u32,
        reason: String,
    },

    #[error("duplicate prompt id `{0}`")]
    DuplicateId(String),

    #[error("k_percent must lie in (0, 100], got {0}")]
    InvalidPercent(f64),

    #[error("unparseable response: {raw:?}")]
    UnparseableResponse { raw: String },

    #[error("timestamp `{0}` has no time-of-day component")]
    AmbiguousTimestamp(String),

    #[error("invalid timestamp `{0}`")]
    InvalidTimestamp(String),

    #[error("column `{0}` has zero variance")]
    DegenerateColumn(String),

    #[error("invalid period split: {0}")]
    InvalidSplit(String),

    #[error("within transformation did not converge after {iterations} sweeps (max group mean {achieved:e})")]
    ConvergenceFailure { iterations: usize, achieved: f64 },

    #[error("collinear design; dependent terms: {}", .columns.join(", "))]
    CollinearDesign { columns: Vec<String> },

    #[error("cluster-robust covariance needs at least 2 clusters, found {0}")]
    ClusterCountError(usize),

    #[error("focal term has zero residual variance")]
    DegenerateFocalTerm,

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("invalid regression spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty panel")]
    EmptyPanel,

    #[error("bootstrap replicate {replicate} could not draw a non-degenerate sample in {attempts} attempts")]
    BootstrapExhausted { replicate: usize, attempts: usize },

    #[error("{context}: {message}")]
    Io { context: String, message: String },
}

impl Error {
    /// Stable machine-readable name, used in CLI error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyPrompt { .. } => "EmptyPrompt",
            Error::MalformedScore { .. } => "MalformedScore",
            Error::DuplicateId(_) => "DuplicateId",
            Error::InvalidPercent(_) => "InvalidPercent",
            Error::UnparseableResponse { .. } => "UnparseableResponse",
            Error::AmbiguousTimestamp(_) => "AmbiguousTimestamp",
            Error::InvalidTimestamp(_) => "InvalidTimestamp",
            Error::DegenerateColumn(_) => "DegenerateColumn",
            Error::InvalidSplit(_) => "InvalidSplit",
            Error::ConvergenceFailure { .. } => "ConvergenceFailure",
            Error::CollinearDesign { .. } => "CollinearDesign",
            Error::ClusterCountError(_) => "ClusterCountError",
            Error::DegenerateFocalTerm => "DegenerateFocalTerm",
            Error::UnknownColumn(_) => "UnknownColumn",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::EmptyPanel => "EmptyPanel",
            Error::BootstrapExhausted { .. } => "BootstrapExhausted",
            Error::Io { .. } => "IoError",
        }
    }

    pub(crate) fn io(context: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            context: context.into(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
