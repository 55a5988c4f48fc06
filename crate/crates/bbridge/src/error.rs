use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] bbridge_core::Error),
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    /// 2 for anything wrong with a file on disk, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io { .. } | Self::Format { .. } => 2,
            Self::Core(_) | Self::Validation(_) => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Attaches a path to a byte-level decoding error.
pub(crate) trait WithPath<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> WithPath<T> for std::result::Result<T, crate::format::FormatError> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|e| CliError::format(path, e.to_string()))
    }
}
