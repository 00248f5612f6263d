use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A CSV row could not be turned into a valid observation.
    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("empty input")]
    EmptyInput,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Forecast of exactly 0 or 1 passed to an e-value operation.
    #[error("boundary forecast p = {p} at index {index}; e-value tests require p in (0,1)")]
    BoundaryForecast { index: usize, p: f64 },

    #[error("exact symmetrized e-value requested for n = {n}, above the cap of {cap}")]
    ExactTooLarge { n: usize, cap: usize },

    #[error("degenerate split: n = {n}, s = {s} leaves one side empty")]
    DegenerateSplit { n: usize, s: f64 },

    #[error("chi-square degrees of freedom must be at least 1, got {0}")]
    InsufficientDof(i64),

    #[error("singular linear system")]
    Singular,

    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NotConverged { iterations: usize, gradient_norm: f64 },

    /// Outcomes are perfectly separated by the covariate; the likelihood has no maximizer.
    #[error("complete separation: logistic maximum likelihood estimate does not exist")]
    Separation,

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
