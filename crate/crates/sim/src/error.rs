use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unsupported confounder dimension {0}; expected one of 1, 2, 4, 6, 10, 15")]
    UnsupportedDim(usize),

    #[error("g_z kind {kind} needs a {role} column (conf_dim >= 6)")]
    MissingColumn { kind: &'static str, role: &'static str },

    #[error("invalid config at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Core(#[from] dncit::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl SimError {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
