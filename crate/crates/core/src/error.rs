use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("matrix is not positive definite: eigenvalue {eigenvalue:e} at or below floor {floor:e}")]
    Singular { eigenvalue: f64, floor: f64 },

    #[error("regularized matrix is not positive definite (ridge {ridge:e})")]
    Indefinite { ridge: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{block} row {row}: success count {value} outside [0, {max}]")]
    OutOfRange {
        block: &'static str,
        row: usize,
        value: i64,
        max: u32,
    },

    #[error("{block} row {row}: non-finite value")]
    NonFinite { block: &'static str, row: usize },

    #[error("{block} row {row}: negative value {value}")]
    Negative {
        block: &'static str,
        row: usize,
        value: f64,
    },

    #[error("row {row}: duplicate instance id {id:?}")]
    DuplicateId { row: usize, id: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("numerical corruption at pick {step}: 1 + phi'A^-1 phi = {value:e}")]
    NumericalCorruption { step: usize, value: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
