use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("ball or support leaves the domain: {0}")]
    OutsideDomain(String),

    #[error("coercivity gate refused: measured lambda = {measured:.6} (threshold {threshold:.6})")]
    Coercivity { measured: f64, threshold: f64 },

    #[error("gate refused: measured lambda = {measured:.6} is not below p# = {threshold:.6}")]
    Gate { measured: f64, threshold: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("negative solution value {min:.3e} below slack {slack:.3e}")]
    Negativity { min: f64, slack: f64 },

    #[error("non-positive value {value:.3e} at index {index}")]
    NonPositive { index: usize, value: f64 },

    #[error("structure condition `{condition}` violated: {witness}")]
    Structure { condition: String, witness: String },

    #[error("all restarts degenerate")]
    Degenerate,

    #[error("residual certificate missing or failed: {0}")]
    Certificate(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn pre(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
