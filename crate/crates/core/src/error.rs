use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants split into two families: contract violations (bad inputs, bad
/// configuration, malformed files) and numeric failures (domain errors,
/// overflow, singular systems). [`Error::is_numeric`] tells them apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("curvature mismatch: {0} vs {1}")]
    CurvatureMismatch(f64, f64),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("magnitude overflow: {0}")]
    Overflow(String),

    #[error("degenerate cone apex: the point has a zero space component")]
    DegenerateApex,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("singular hessian at c3* = {c3}: d2J/dc3^2 = {value:e}")]
    SingularHessian { c3: f64, value: f64 },

    #[error("no sign change on root bracket [{low}, {high}]")]
    RootBracket { low: f64, high: f64 },

    #[error("too many treecuts: more than {limit}")]
    TooLarge { limit: usize },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss {
        step: usize,
        trace: Box<crate::trainer::StepTrace>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NumericDomain(_)
                | Error::Overflow(_)
                | Error::DegenerateApex
                | Error::DegenerateGeometry(_)
                | Error::SingularHessian { .. }
                | Error::RootBracket { .. }
                | Error::NonFiniteLoss { .. }
        )
    }

    /// True for errors caused by invalid inputs, configs, or files.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Contract(_)
                | Error::DimensionMismatch { .. }
                | Error::CurvatureMismatch(..)
                | Error::TooLarge { .. }
                | Error::Parse { .. }
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
