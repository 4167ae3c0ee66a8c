use std::path::PathBuf;

use pushsum::bounds::BoundError;
use pushsum::data_io::DataError;
use pushsum::engine::EngineError;
use pushsum::mixing::MixingError;
use pushsum::objectives::ObjectiveError;
use pushsum::schedule::ScheduleError;
use pushsum::stability::StabilityError;
use pushsum::topology::TopologyError;
use thiserror::Error;

/// Failure of a command; each variant maps to one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or arguments (exit code 1).
    #[error("config error: {0}")]
    Config(String),
    /// A run broke an invariant of the algorithm or of the bounds (exit code 2).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Reading or writing a file failed (exit code 3).
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// An input file exists but cannot be parsed (exit code 3).
    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Contract(_) => 2,
            CliError::Io { .. } | CliError::Input { .. } => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Maps a data error raised while reading `path`.
    pub(crate) fn data(path: impl Into<PathBuf>, e: DataError) -> Self {
        let path = path.into();
        match e {
            DataError::Io(source) | DataError::File { source, .. } => CliError::Io { path, source },
            DataError::Parse { .. } | DataError::DimensionExceeded { .. } => CliError::Input {
                path,
                message: e.to_string(),
            },
            DataError::InsufficientSamples { .. } | DataError::InvalidArgument(_) => {
                CliError::Config(e.to_string())
            }
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(source) => CliError::io("<data>", source),
            DataError::File { path, source } => CliError::io(path, source),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<TopologyError> for CliError {
    fn from(e: TopologyError) -> Self {
        match e {
            TopologyError::Io(source) => CliError::io("<edge list>", source),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<MixingError> for CliError {
    fn from(e: MixingError) -> Self {
        match e {
            MixingError::NotStronglyConnected(_) => CliError::Config(e.to_string()),
            other => CliError::Contract(other.to_string()),
        }
    }
}

impl From<ScheduleError> for CliError {
    fn from(e: ScheduleError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ObjectiveError> for CliError {
    fn from(e: ObjectiveError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        CliError::Contract(e.to_string())
    }
}

impl From<StabilityError> for CliError {
    fn from(e: StabilityError) -> Self {
        match e {
            StabilityError::EmptyPool | StabilityError::Empty(_) => CliError::Config(e.to_string()),
            other => CliError::Contract(other.to_string()),
        }
    }
}

impl From<BoundError> for CliError {
    fn from(e: BoundError) -> Self {
        match e {
            BoundError::InvalidParam { .. } | BoundError::MissingAlpha => {
                CliError::Config(e.to_string())
            }
            other => CliError::Contract(other.to_string()),
        }
    }
}
