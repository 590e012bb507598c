use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("trial point rejected: constraint component {component} = {value:e} is not strictly negative")]
    RejectedPoint { component: usize, value: f64 },

    #[error("agent {agent}: iterate is not strictly feasible ({detail})")]
    FeasibilityViolation { agent: usize, detail: String },

    #[error("agent {agent}: local KKT system is singular or ill-conditioned (condition estimate {condition:e})")]
    SingularKkt { agent: usize, condition: f64 },

    #[error("root system is singular or ill-conditioned (condition estimate {condition:e})")]
    SingularRoot { condition: f64 },

    #[error("dense Newton system is singular")]
    SingularSystem,

    #[error("invalid solver state: {0}")]
    InvalidState(String),

    #[error("line search failed: step shrank to {alpha:e} with residual norm {residual:e}")]
    LineSearchFailure { alpha: f64, residual: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("agent {agent}: no strictly feasible initializer for family `{family}`")]
    UnsupportedInitialization { agent: usize, family: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("oracle failure: {0}")]
    OracleFailure(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
