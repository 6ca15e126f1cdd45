use thiserror::Error;

/// Errors produced by the simulation and reconstruction routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid dimension {0}: must be at least 2")]
    InvalidDimension(usize),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("operator is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("vector length {0} is not a perfect square")]
    NotPerfectSquare(usize),

    #[error("{what} = {value} is outside the allowed range")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("largest eigenvalue {0:e} is negative, no valid projector")]
    NoValidProjector(f64),

    #[error("fields or masks are sampled on different grids")]
    GridMismatch,

    #[error("grid spacing {spacing:e} m exceeds the limit {limit:e} m")]
    GridTooCoarse { spacing: f64, limit: f64 },

    #[error("design matrix is rank deficient: rank {rank}, need {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("measurement stack is rank deficient, conditioning is infinite")]
    InfiniteConditioning,

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
