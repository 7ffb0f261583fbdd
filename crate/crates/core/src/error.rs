use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A spec or world failed its construction invariants.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    /// An input violated an operation's domain (negative component, zero probability, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An inner solver ran out of iterations; carries the residual it got stuck at.
    #[error("{context} did not converge (residual {residual:.3e})")]
    Solver { context: String, residual: f64 },

    /// Trace and oracle were computed on different worlds.
    #[error("world hash mismatch: trace {trace}, oracle {oracle}")]
    WorldMismatch { trace: String, oracle: String },
}

impl Error {
    pub(crate) fn solver(context: impl Into<String>, residual: f64) -> Self {
        Error::Solver {
            context: context.into(),
            residual,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidSpec(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
