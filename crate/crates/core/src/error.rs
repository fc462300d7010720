use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },

    #[error("input weight R is not positive definite (min eigenvalue {min_eig:e})")]
    RNotPd { min_eig: f64 },

    #[error("input weight R is singular")]
    RSingular,

    #[error("matrix is not Hurwitz (max real part {max_re:e})")]
    NotHurwitz { max_re: f64 },

    #[error("pair is not stabilizable: {0}")]
    NotStabilizable(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("subsystem {subsystem} state {index} is shared more than once")]
    DuplicateSharedIndex { subsystem: usize, index: usize },

    #[error("subsystem {subsystem} state index {index} out of range (dimension {dim})")]
    IndexOutOfRange {
        subsystem: usize,
        index: usize,
        dim: usize,
    },

    #[error("{which} weight is invalid: {reason}")]
    InvalidWeight { which: String, reason: String },

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
