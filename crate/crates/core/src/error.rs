use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("cell ({row}, {col}) is not covered by any piece")]
    Coverage { row: usize, col: usize },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("validation error in layer {index}: {reason}")]
    InvalidLayer { index: usize, reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported operation in backward pass: {0}")]
    UnsupportedOperation(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("outside oracle scope: {0}")]
    OracleScope(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
