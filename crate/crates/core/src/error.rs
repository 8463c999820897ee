//! Error taxonomy shared by all modules. Each variant carries the stable
//! machine-readable code used in CLI output and exit-code mapping.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid-argument: {0}")]
    InvalidArgument(String),

    #[error("under-resolved-kernel: tabulated kernel needs at least 8 samples, got {0}")]
    UnderResolvedKernel(usize),

    #[error("domain-exit: particle left the safe region at step {step} (position {position}); enlarge the spatial domain")]
    DomainExit { step: usize, position: f64 },

    #[error("degenerate-derivative: ||D xi||_H is zero, cannot form the Malliavin weight")]
    DegenerateDerivative,

    #[error("shape-error: {0}")]
    ShapeError(String),

    #[error("cfl-violation: nu*dt/dy^2 = {0} exceeds 1/4")]
    CflViolation(f64),

    #[error("blowup: field magnitude exceeded 1e6 at step {0}")]
    Blowup(usize),

    #[error("budget-exceeded: experiment needs {needed} density paths, budget is {budget}")]
    BudgetExceeded { needed: u64, budget: u64 },

    #[error("insufficient-lags: need at least 3 lags, got {0}")]
    InsufficientLags(usize),

    #[error("no-data: empty sample set")]
    NoData,
}

impl Error {
    /// Stable short code, the part before the first ':' in the message.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::UnderResolvedKernel(_) => "under-resolved-kernel",
            Error::DomainExit { .. } => "domain-exit",
            Error::DegenerateDerivative => "degenerate-derivative",
            Error::ShapeError(_) => "shape-error",
            Error::CflViolation(_) => "cfl-violation",
            Error::Blowup(_) => "blowup",
            Error::BudgetExceeded { .. } => "budget-exceeded",
            Error::InsufficientLags(_) => "insufficient-lags",
            Error::NoData => "no-data",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
