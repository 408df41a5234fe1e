//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("offset overlap: {0}")]
    OffsetOverlap(String),

    #[error("unknown dtype: {0}")]
    UnknownDtype(String),

    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("incompatible archives: {0}")]
    IncompatibleArchives(String),

    #[error("all merge weights are zero")]
    ZeroWeightSum,

    #[error("interpolation coefficient outside [0, 1]: {0}")]
    BadCoefficient(f64),

    #[error("bad grid: {0}")]
    BadGrid(String),

    #[error("missing scores: {0}")]
    MissingScores(String),

    #[error("invalid recipe field: {0}")]
    RecipeInvalid(String),

    #[error("baseline has zero harmful generations, relative change undefined")]
    DegenerateBaseline,

    #[error("empty judgment set")]
    EmptySet,

    #[error("missing baseline row: {0}")]
    MissingBaseline(String),

    #[error("unreadable judgment file: {0}")]
    UnreadableFile(String),

    #[error("unknown tensor: {0}")]
    UnknownTensor(String),
}

pub type Result<T> = std::result::Result<T, Error>;
