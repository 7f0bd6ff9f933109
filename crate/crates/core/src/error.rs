use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("kernel matrix is singular even with jitter {jitter:e}")]
    SingularKernel { jitter: f64 },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point outside the domain: {0}")]
    DomainViolation(String),

    #[error("duplicate observation at {0}")]
    DuplicatePoint(String),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("candidate set is empty")]
    EmptyCandidateSet,

    #[error("fidelity {0} is not in the cost table")]
    UnknownFidelity(f64),

    #[error("empty sample")]
    EmptySample,

    #[error("non-finite importance weight at sample {index}")]
    NonFiniteWeight { index: usize },

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("model evaluation failed at x={x:?}, s={s}: {message}")]
    Evaluation { x: Vec<f64>, s: f64, message: String },

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    External(#[from] crate::cli::external::ExternalError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag, used in the CLI's error JSON and by the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InsufficientData { .. } => "insufficient_data",
            Error::SingularKernel { .. } => "singular_kernel",
            Error::InvalidDomain(_) => "invalid_domain",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::DomainViolation(_) => "domain_violation",
            Error::DuplicatePoint(_) => "duplicate_point",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::EmptyCandidateSet => "empty_candidate_set",
            Error::UnknownFidelity(_) => "unknown_fidelity",
            Error::EmptySample => "empty_sample",
            Error::NonFiniteWeight { .. } => "non_finite_weight",
            Error::UnknownProblem(_) => "unknown_problem",
            Error::Evaluation { .. } => "evaluation",
            Error::Iteration { source, .. } => source.kind(),
            Error::Config { .. } => "config",
            Error::External(_) => "external_model",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
