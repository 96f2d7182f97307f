use std::path::PathBuf;

use spkadapt_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> CliError {
        CliError::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// 2 usage/config, 3 data, 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } | CliError::Format { .. } | CliError::Csv(_) => 3,
            CliError::Core(e) => match e {
                CoreError::Config(_)
                | CoreError::Spec(_)
                | CoreError::Contract(_)
                | CoreError::Identity(_)
                | CoreError::Lookup(_)
                | CoreError::Parameter(_) => 2,
                CoreError::Data(_) | CoreError::Dimension { .. } => 3,
                CoreError::Divergence { .. } | CoreError::Numeric(_) => 4,
                CoreError::State(_) => 1,
            },
        }
    }
}
