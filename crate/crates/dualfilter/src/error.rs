use std::path::PathBuf;

/// Failure of a command, carrying its exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("impossible observation: {0}")]
    Impossible(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub const EXIT_INPUT: i32 = 2;
    pub const EXIT_IMPOSSIBLE: i32 = 3;
    pub const EXIT_INVARIANT: i32 = 4;

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io { .. } => Self::EXIT_INPUT,
            CliError::Impossible(_) => Self::EXIT_IMPOSSIBLE,
            CliError::Invariant(_) => Self::EXIT_INVARIANT,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<dualfilter_core::Error> for CliError {
    fn from(err: dualfilter_core::Error) -> Self {
        match err {
            dualfilter_core::Error::ImpossibleObservation { t } => {
                CliError::Impossible(format!("prefix z_1..z_{t} has probability zero"))
            }
            other => CliError::Input(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
