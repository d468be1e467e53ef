use thiserror::Error;

/// Errors raised while building, evaluating, optimising or analysing a design.
#[derive(Debug, Error)]
pub enum Error {
    /// A structural constraint on a design parameter does not hold.
    #[error("constraint violated: {0}")]
    Constraint(String),

    /// The treatment effect cannot be estimated from the data available.
    #[error("treatment effect not estimable: {0}")]
    NotEstimable(String),

    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A covariance matrix handed to the integrator is not positive definite.
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    /// An index (analysis, period, cluster) is out of range.
    #[error("index out of range: {0}")]
    OutOfRange(String),

    /// A root bracket could not be established.
    #[error("root not found: {0}")]
    RootNotFound(String),

    /// The observed result lies inside the continuation region of its analysis.
    #[error("result is not a terminal outcome of the design: {0}")]
    NotTerminal(String),

    /// No design meeting the error-rate constraints was found.
    #[error("no feasible design found (best penalized objective {best_objective})")]
    Infeasible {
        best_objective: f64,
        best: Option<Box<crate::optimize::CeOutcome>>,
    },

    /// Fixed-sample power cannot be reached with the permitted cluster-period size.
    #[error("power {target} unreachable for m <= {m_max}")]
    PowerUnreachable { target: f64, m_max: usize },

    /// A scenario or design document could not be parsed.
    #[error("parse error in {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn constraint(msg: impl Into<String>) -> Self {
        Error::Constraint(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Exit code used by the command-line frontend: 2 for input problems,
    /// 1 for constraint or inference failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Io(_) | Error::Csv(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
