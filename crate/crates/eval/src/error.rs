use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] densegen_core::Error),
    #[error(transparent)]
    Data(#[from] densegen_data::Error),
    #[error("configuration error: {0}")]
    Config(String),
    /// The operation does not apply to this layer kind.
    #[error("out of scope: {0}")]
    Scope(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("judge transport: {0}")]
    Transport(String),
    #[error("judge protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
