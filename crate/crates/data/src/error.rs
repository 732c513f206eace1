use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] densegen_core::Error),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unknown asset id {0:?}")]
    UnknownAsset(String),

    #[error("duplicate asset id {0:?}")]
    DuplicateAsset(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Self::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
