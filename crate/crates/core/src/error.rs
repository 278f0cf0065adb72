use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("box must have at least one axis")]
    EmptyBox,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("variable x{index} at position {pos} is out of range for dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize, pos: usize },

    #[error("division by an interval containing zero: {0}")]
    DivisionByZero(String),
    #[error("logarithm of a non-positive argument: {0}")]
    LogDomain(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("point {point:?} lies outside the domain")]
    OutsideDomain { point: Vec<f64> },
    #[error("malformed transition relation: {0}")]
    MalformedRelation(String),
    #[error("closed form not available: {0}")]
    KindMismatch(String),
    #[error("a Lipschitz constant is required for {0}")]
    MissingLipschitz(String),
    #[error("resource guard: {cells} cells exceeds the limit of {limit}")]
    ResourceGuard { cells: usize, limit: usize },
    #[error("internal numeric failure: {0}")]
    Internal(String),
}

impl Error {
    /// Errors that originate from user-supplied definitions rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInterval { .. }
                | Error::EmptyBox
                | Error::DimensionMismatch { .. }
                | Error::Syntax { .. }
                | Error::UnknownIdentifier { .. }
                | Error::VariableOutOfRange { .. }
                | Error::InvalidParameter(_)
                | Error::KindMismatch(_)
                | Error::MissingLipschitz(_)
        )
    }
}
