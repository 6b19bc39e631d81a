use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("image has zero pixel variance")]
    ConstantImage,
    #[error("image needs at least {needed} pixels, has {got}")]
    TooFewPixels { needed: usize, got: usize },
    #[error("patch side {side} does not fit in a {width}x{height} image")]
    PatchTooLarge {
        side: usize,
        width: usize,
        height: usize,
    },
    #[error("patch at ({row}, {col}) with side {side} leaves a {width}x{height} frame")]
    OutOfBounds {
        row: usize,
        col: usize,
        side: usize,
        width: usize,
        height: usize,
    },
    #[error("eigenvalue {index} of the sample covariance is {value:e}, not above {threshold:e}")]
    RankDeficient {
        index: usize,
        value: f64,
        threshold: f64,
    },
    #[error("k = {k} outside 1..={max}")]
    BadK { k: usize, max: usize },
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("bad lattice dimensions: {0}")]
    BadDimensions(String),
    #[error("index {index} out of range for {len} units")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("matrix is numerically singular (condition {condition:e})")]
    SingularMatrix { condition: f64 },
    #[error("training diverged at iteration {iteration}: objective {objective}")]
    Diverged { iteration: usize, objective: f64 },
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("not a permutation of 0..{0}")]
    BadPermutation(usize),
    #[error("bad stimulus spec: {0}")]
    BadSpec(String),
    #[error("all series are degenerate (zero variance): {0}")]
    DegenerateSeries(String),
    #[error("permutation test group is empty")]
    EmptyGroup,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. } | Error::SingularMatrix { .. } | Error::Diverged { .. }
        )
    }
}
