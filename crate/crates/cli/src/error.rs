use std::path::PathBuf;

use cicada_core::numerics::NumericsError;
use cicada_core::CicadaError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Config {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error(transparent)]
    Core(#[from] CicadaError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// 2 config/usage, 3 I/O, 4 numerical, 5 shape.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 2,
            CliError::Io { .. } | CliError::Format { .. } => 3,
            CliError::Core(e) => match e {
                CicadaError::BadConfig(_) | CicadaError::MissingLabels => 2,
                CicadaError::Io(_)
                | CicadaError::CorruptFile(_)
                | CicadaError::VersionMismatch { .. } => 3,
                CicadaError::DimensionMismatch { .. }
                | CicadaError::LengthMismatch { .. }
                | CicadaError::SeriesTooShort { .. }
                | CicadaError::TooFewWindows { .. }
                | CicadaError::Numerics(NumericsError::ShapeMismatch { .. }) => 5,
                _ => 4,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
