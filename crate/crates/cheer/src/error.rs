use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] cheer_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    /// A data or checkpoint file that parses but is inconsistent.
    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },

    /// Bad configuration file or command-line arguments.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Some (seed, method) cells of a run failed; the rest were written.
    #[error("{failed} of the run's cells failed (details in failures.json)")]
    PartialFailure { failed: usize },
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Self {
        let path = path.into();
        move |source| CliError::Json { path, source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// 1 for validation problems, 2 for failures while running.
    pub fn exit_code(&self) -> u8 {
        use cheer_core::Error as E;
        match self {
            CliError::Config(_) => 1,
            CliError::Core(
                E::InvalidConfig(_)
                | E::Domain(_)
                | E::ModeMismatch(_)
                | E::SegmentTooShort(_)
                | E::DimensionMismatch(_),
            ) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
