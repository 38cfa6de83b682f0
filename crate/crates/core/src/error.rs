use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no admissible control at step {step} for inventory {inventory:?}")]
    EmptyFeasibleSet { step: usize, inventory: Vec<f64> },

    #[error("control {control:?} drives inventory {inventory:?} to {next:?}, outside the bounds")]
    InadmissibleControl {
        control: Vec<f64>,
        inventory: Vec<f64>,
        next: Vec<f64>,
    },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("unsupported moment: {0}")]
    UnsupportedMoment(String),

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("policy was built for problem {expected}, evaluated against {found}")]
    ProblemMismatch { expected: String, found: String },

    #[error("transition leaves the node set at step {step}: {value} is not a node")]
    ClosureViolation { step: usize, value: f64 },

    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported policy file version {0}")]
    UnsupportedVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
