//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument to a library operation.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// Config-file parse or validation failure. Carries a line number when
    /// the offending text is known.
    #[error("config error: {0}")]
    Config(String),

    /// Grid too large for the dense LP machinery.
    #[error("grid has {points} points, above the LP cap of {cap} (constraint count grows quadratically)")]
    LpTooLarge { points: usize, cap: usize },

    /// A posterior or candidate set came out empty for the given observation.
    #[error("observation inconsistent with the strategy: {0}")]
    ImpossibleObservation(String),

    /// Simplex gave up before reaching optimality.
    #[error("LP iteration limit reached after {0} pivots")]
    IterationLimit(usize),

    /// Should not happen for well-formed inputs; kept as a hard error.
    #[error("LP internal error: {0}")]
    LpInternal(String),

    /// Exhaustive permutation search is factorial; refuse large inputs.
    #[error("too many users for exhaustive order search: {n} > {max} (fix a heuristic order instead)")]
    TooManyUsers { n: usize, max: usize },

    /// Flexibility sampler cannot produce values in [0, 1/2].
    #[error("flexibility sampler rejected configuration: {0}")]
    FlexSampler(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
