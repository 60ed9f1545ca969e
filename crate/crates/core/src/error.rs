use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("enumeration of {needed} items exceeds the cap of {cap}")]
    CapExceeded { needed: u128, cap: u128 },

    #[error("transition matrix is not irreducible")]
    NotIrreducible,

    #[error("subshift has no infinite admissible sequence")]
    EmptySubshift,

    #[error("invalid word: {0}")]
    InvalidWord(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid IFS: {0}")]
    InvalidIfs(String),

    #[error("operation requires an equal-ratio IFS")]
    MixedRatio,

    #[error("invalid weight law: {0}")]
    InvalidLaw(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scale {scale:e} is below the discretization resolution {resolution:e}")]
    ScaleBelowResolution { scale: f64, resolution: f64 },

    /// The ball at `scale` had zero mass; `trace` holds the quotients computed before it.
    #[error("zero-mass ball at scale {scale:e}")]
    ZeroMassBall { scale: f64, trace: Vec<f64> },

    #[error("degenerate regression window: {0}")]
    DegenerateWindow(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
