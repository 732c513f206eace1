use std::process::ExitCode;

use thiserror::Error;

/// Process exit status classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    /// Runtime or numeric failure.
    Runtime = 1,
    /// Bad flags, paths or inputs.
    Usage = 2,
    /// Finished, but an external service left results incomplete.
    Incomplete = 3,
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> Self {
        ExitCode::from(s as u8)
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn status(&self) -> Status {
        match self {
            CliError::Usage(_) => Status::Usage,
            CliError::Runtime(_) => Status::Runtime,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl From<densegen_core::Error> for CliError {
    fn from(e: densegen_core::Error) -> Self {
        use densegen_core::Error as E;
        match e {
            E::Numeric(_) | E::UnsupportedOperation(_) | E::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<densegen_data::Error> for CliError {
    fn from(e: densegen_data::Error) -> Self {
        use densegen_data::Error as E;
        match e {
            E::Core(c) => c.into(),
            E::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<densegen_eval::Error> for CliError {
    fn from(e: densegen_eval::Error) -> Self {
        use densegen_eval::Error as E;
        match e {
            E::Core(c) => c.into(),
            E::Data(d) => d.into(),
            E::Transport(_) | E::Protocol(_) | E::Io(_) | E::Image(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<image::ImageError> for CliError {
    fn from(e: image::ImageError) -> Self {
        CliError::Runtime(e.to_string())
    }
}
