use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum CmlError {
    /// Invalid configuration: unknown map kind, inadmissible coupling, bad topology.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Precondition of an operation was violated by the caller.
    #[error("usage error: {0}")]
    Usage(String),

    /// Iterative-lemma hypothesis `a < E_-^m0` does not hold.
    #[error("infeasible parameters: {0}")]
    Feasibility(String),

    /// A lemma parameter violates one of its printed bounds.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A computed value escaped its invariant range beyond rounding tolerance.
    #[error("internal consistency error: {0}")]
    Internal(String),

    /// A configured runtime cap was hit; the partial result is attached where useful.
    #[error("runtime cap exceeded: {0}")]
    CapExceeded(String),
}

pub type Result<T> = std::result::Result<T, CmlError>;
