use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}: file not found")]
    FileNotFound(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("dimension error at {path}: {message}")]
    Dimension { path: String, message: String },
    #[error("invalid argument: {0}")]
    Usage(String),
    #[error("inconsistent results: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Core(#[from] rsmlqr_core::Error),
}
