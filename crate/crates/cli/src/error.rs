//! Error kinds mapped to process exit codes.

use gallon::datasets::{DatasetError, SplitError};
use gallon::distillation::DistillError;
use gallon::teacherlm::{EmbedError, LlmError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    /// Missing or unreadable inputs, unparsable datasets.
    #[error("data: {0}")]
    Data(String),
    #[error("network: {0}")]
    Network(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Network(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SplitError> for CliError {
    fn from(e: SplitError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Cache { .. } => CliError::Data(e.to_string()),
            _ => CliError::Network(e.to_string()),
        }
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Remote(inner) => inner.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<DistillError> for CliError {
    fn from(e: DistillError) -> Self {
        match e {
            DistillError::Config(_) => CliError::Config(e.to_string()),
            DistillError::Checkpoint(_) | DistillError::TeacherRows { .. } | DistillError::MissingTeacher(_) | DistillError::EmptySplit => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}
