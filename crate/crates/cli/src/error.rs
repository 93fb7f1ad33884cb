use std::fmt;
use std::path::Path;

use noisylab::analysis::AnalysisError;
use noisylab::data::DataError;
use noisylab::models::ModelError;
use noisylab::training::TrainError;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    MissingInput,
    Numerical,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::MissingInput => 3,
            ErrorKind::Numerical => 4,
            ErrorKind::Internal => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        CliError { kind, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError::new(ErrorKind::Config, message)
    }

    pub fn missing(path: &Path, what: &str) -> Self {
        CliError::new(ErrorKind::MissingInput, format!("{what} not found: {}", path.display()))
    }

    pub fn write(path: &Path, e: impl fmt::Display) -> Self {
        CliError::new(ErrorKind::Internal, format!("cannot write {}: {e}", path.display()))
    }

    /// One JSON object on one line.
    pub fn to_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: ErrorKind,
            exit_code: i32,
            message: &'a str,
        }
        serde_json::to_string(&Line { error: self.kind, exit_code: self.kind.exit_code(), message: &self.message })
            .expect("error line serializes")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let kind = match &e {
            DataError::Config { .. } | DataError::CalibrationFailed { .. } => ErrorKind::Config,
            DataError::Io { .. }
            | DataError::BadMagic { .. }
            | DataError::VersionMismatch { .. }
            | DataError::Truncated { .. }
            | DataError::InvalidPatch(_)
            | DataError::Manifest(_) => ErrorKind::MissingInput,
            _ => ErrorKind::Internal,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let kind = match &e {
            ModelError::Io { .. } | ModelError::CorruptCheckpoint(_) => ErrorKind::MissingInput,
            _ => ErrorKind::Config,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Data(d) => d.into(),
            TrainError::Analysis(a) => a.into(),
            TrainError::NonFinite { .. } | TrainError::NonFiniteLogits => CliError::new(ErrorKind::Numerical, e.to_string()),
            _ => CliError::new(ErrorKind::Config, e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Model(m) => m.into(),
            AnalysisError::Data(d) => d.into(),
            AnalysisError::NonFinite(_) | AnalysisError::ZeroVariance { .. } => CliError::new(ErrorKind::Numerical, e.to_string()),
            _ => CliError::new(ErrorKind::Config, e.to_string()),
        }
    }
}
