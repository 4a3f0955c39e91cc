use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("top-k eigenvalue {lambda_k:e} is numerically zero")]
    SingularTopSpace { lambda_k: f64 },

    #[error("target is numerically zero ({0})")]
    DegenerateTarget(String),

    #[error("oracle contract violated at step {step}: {reason}")]
    OracleContractViolation { step: usize, reason: String },

    #[error("residual matrix vanishes on the projector range")]
    NullResidualSpace,

    #[error("iteration budget exhausted after {iterations} iterations (achieved mass {achieved:e}, wanted {target:e})")]
    BudgetExhausted {
        iterations: usize,
        achieved: f64,
        target: f64,
    },

    #[error("residual large-eigenspace block is singular")]
    DegenerateResidual,

    #[error("precondition unmet: {0}")]
    PrecondUnmet(String),

    #[error("parameter regime rejected: {0}")]
    RegimeRejected(String),

    #[error("parameters outside the construction window: {0}")]
    NotInRegime(String),

    #[error("filter removed all sample mass")]
    FilterCollapse,

    #[error("perturbation {rho:e} exceeds the admissible radius {limit:e}")]
    PerturbationTooLarge { rho: f64, limit: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
