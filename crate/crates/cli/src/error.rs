use std::path::PathBuf;

use cg_invert_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::InvalidConfig(_) | CoreError::Unsupported(_) | CoreError::TapeMismatch(_) => {
                CliError::Config(msg)
            }
            CoreError::InvalidDimension(_)
            | CoreError::DimensionMismatch { .. }
            | CoreError::NonSquareImage(_)
            | CoreError::ZeroSignal
            | CoreError::InsufficientImages { .. } => CliError::Data(msg),
            CoreError::Domain { .. }
            | CoreError::NotPositiveDefinite
            | CoreError::LinesearchFailure(_)
            | CoreError::Divergence(_)
            | CoreError::NonMonotoneCost { .. }
            | CoreError::NonFiniteLoss { .. } => CliError::Numerical(msg),
        }
    }
}
