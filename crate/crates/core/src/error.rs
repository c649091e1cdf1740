use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid network: {0}")]
    Network(String),

    #[error("agent {agent}: {reason}")]
    InfeasibleAgent { agent: usize, reason: String },

    #[error("initial strategy is infeasible: {0}")]
    InfeasibleInitial(String),

    /// Unparsable or malformed input.
    #[error("configuration error: {0}")]
    Config(String),

    /// Well-formed input whose contents break a modelling requirement.
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    /// A runtime check of a guaranteed property failed (potential increase,
    /// feasibility loss). Always indicates a bug or a numerically broken model.
    #[error("assertion failed at t={t}: {what}")]
    Assertion { t: usize, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("plot export failed: {0}")]
    Plot(String),
}
