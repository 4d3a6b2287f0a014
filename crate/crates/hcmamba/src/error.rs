use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: byte {offset}: {msg}")]
    Format { path: PathBuf, offset: usize, msg: String },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Refused(String),
    #[error(transparent)]
    Core(#[from] hcmamba_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable class used on the command line.
    pub fn class(&self) -> &'static str {
        use hcmamba_core::Error as C;
        match self {
            Self::Io { .. } => "io",
            Self::Format { .. } => "format",
            Self::Config(_) => "config",
            Self::Data(_) => "data",
            Self::Checkpoint(_) => "checkpoint",
            Self::Numeric(_) => "numeric",
            Self::Refused(_) => "refused",
            Self::Core(e) => match e {
                C::Shape { .. } => "shape",
                C::Dimension(_) => "dimension",
                C::Contract(_) => "contract",
                C::Domain(_) => "domain",
                C::Data(_) => "data",
                C::EmptyTape | C::BackwardTwice => "autodiff",
                C::NonFinite { .. } => "numeric",
            },
        }
    }
}
