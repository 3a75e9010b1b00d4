use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: invsen::Error,
    },

    #[error(transparent)]
    Lib(#[from] invsen::Error),
}

impl CliError {
    /// 0 success, 1 I/O or runtime, 2 usage or configuration, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        let lib = match self {
            CliError::Usage(_) => return 2,
            CliError::File { source, .. } => source,
            CliError::Lib(e) => e,
        };
        match lib {
            invsen::Error::Config(_) | invsen::Error::LabelOutOfRange { .. } => 2,
            invsen::Error::Diverged { .. } => 3,
            _ => 1,
        }
    }

    pub fn file(path: impl Into<PathBuf>) -> impl FnOnce(invsen::Error) -> CliError {
        let path = path.into();
        move |source| CliError::File { path, source }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;
