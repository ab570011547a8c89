use std::path::PathBuf;

use kvae_autodiff::AdError;
use kvae_core::CoreError;
use kvae_worldgen::WorldError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Autodiff(#[from] AdError),

    #[error(transparent)]
    World(#[from] WorldError),
}

impl HarnessError {
    /// Process exit status: 2 for anything the user can fix in the inputs,
    /// 3 for numerical breakdown.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Numerical(_) => 3,
            HarnessError::Core(e) if e.is_numerical() => 3,
            HarnessError::Autodiff(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
