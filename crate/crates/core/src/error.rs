use thiserror::Error;

/// Errors raised by the liquidation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A model specification violates one of its standing assumptions.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// An argument lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A jump was observed whose intensity is zero in every believed state.
    #[error("impossible observation: mark {mark} at t = {t} has zero intensity under the current belief")]
    ImpossibleObservation { mark: usize, t: f64 },

    /// Malformed input data (event logs, policy tables, caches).
    #[error("input error: {0}")]
    Input(String),

    /// Solver configuration problems, e.g. an unstable explicit step.
    #[error("configuration error: {0}")]
    Config(String),

    /// Parameter estimation failed.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// An internal invariant was violated at runtime.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
