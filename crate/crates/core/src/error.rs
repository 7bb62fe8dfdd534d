//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A count argument lies outside `0..=n`.
    #[error("count {k} out of range for {n} trials")]
    CountOutOfRange { k: u64, n: usize },

    /// Brute-force enumeration is capped; it exists as a test oracle only.
    #[error("enumeration supports at most {cap} trials, got {n}")]
    EnumerationCap { n: usize, cap: usize },

    /// The Poisson binomial variance is zero, so the normal approximation
    /// (and anything that divides by the variance) is undefined.
    #[error("degenerate distribution: all success probabilities are 0 or 1")]
    DegenerateVariance,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid probability: {0}")]
    InvalidProbability(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty dataset")]
    EmptyDataset,

    /// Training hit a non-finite quantity; `context` locates it (epoch,
    /// precinct) when known.
    #[error("non-finite {what}{context}")]
    NonFinite { what: String, context: String },

    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("split error: {0}")]
    Split(String),

    /// Weighted R² is undefined when every actual share is identical.
    #[error("undefined variance: all actual shares are identical")]
    ConstantActuals,

    #[error("cannot open {path}: {source}")]
    FileOpen {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numeric/training kind (as opposed to bad
    /// input or configuration). The CLI maps these onto exit code 1.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::DegenerateVariance)
    }
}
