use std::path::PathBuf;

use kvae_autodiff::AdError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Autodiff(#[from] AdError),

    #[error("episode {episode}: {source}")]
    Episode {
        episode: usize,
        #[source]
        source: AdError,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub fn is_numerical(&self) -> bool {
        match self {
            CoreError::Autodiff(e) | CoreError::Episode { source: e, .. } => e.is_numerical(),
            _ => false,
        }
    }

    pub fn in_episode(self, episode: usize) -> Self {
        match self {
            CoreError::Autodiff(source) => CoreError::Episode { episode, source },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
