use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate belief: all entries have zero probability")]
    DegenerateBelief,

    #[error("zero total likelihood in Bayesian update")]
    ZeroTotalLikelihood,

    #[error("infeasible state: {0}")]
    InfeasibleState(String),

    #[error("game `{game}` does not provide {capability}")]
    MissingCapability { game: String, capability: &'static str },

    #[error("unknown game id `{0}`")]
    UnknownGame(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("estimate unavailable: {0}")]
    EstimateUnavailable(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
