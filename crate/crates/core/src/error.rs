use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cohort is empty")]
    EmptyCohort,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFiniteResult(String),

    #[error("similarity weights are degenerate (all similarities are zero) and uniform fallback is disabled")]
    DegenerateCohort,

    #[error("collaborator key mismatch: {0}")]
    KeyMismatch(String),

    #[error("invalid privacy budget: {0}")]
    InvalidBudget(String),

    #[error("invalid noise calibration: {0}")]
    InvalidCalibration(String),

    #[error("no unseen cohort remains for round {round} ({seen} cohorts already used)")]
    CohortsExhausted { round: u32, seen: usize },

    #[error("trainer failed for collaborator {collaborator} in round {round}: {message}")]
    TrainerFailure {
        collaborator: String,
        round: u32,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("spacing mismatch: {0:?} vs {1:?}")]
    SpacingMismatch([f64; 3], [f64; 3]),

    #[error("invalid label volume: {0}")]
    InvalidVolume(String),

    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    #[error("failed to parse config {path}: {message}")]
    ConfigParseError { path: PathBuf, message: String },

    #[error("output {0} already exists (use --force to overwrite)")]
    OutputExists(PathBuf),

    #[error("missing run data: {0}")]
    MissingRunData(String),

    #[error("manifest error: {0}")]
    ManifestError(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    /// Variant name, printed on the diagnostic stream by the CLI.
    pub fn name(&self) -> &'static str {
        match self {
            Error::EmptyCohort => "EmptyCohort",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonFiniteResult(_) => "NonFiniteResult",
            Error::DegenerateCohort => "DegenerateCohort",
            Error::KeyMismatch(_) => "KeyMismatch",
            Error::InvalidBudget(_) => "InvalidBudget",
            Error::InvalidCalibration(_) => "InvalidCalibration",
            Error::CohortsExhausted { .. } => "CohortsExhausted",
            Error::TrainerFailure { .. } => "TrainerFailure",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::SpacingMismatch(..) => "SpacingMismatch",
            Error::InvalidVolume(_) => "InvalidVolume",
            Error::InvalidCheckpoint(_) => "InvalidCheckpoint",
            Error::ConfigParseError { .. } => "ConfigParseError",
            Error::OutputExists(_) => "OutputExists",
            Error::MissingRunData(_) => "MissingRunData",
            Error::ManifestError(_) => "ManifestError",
            Error::Io { .. } => "IoError",
            Error::Serialization(_) => "SerializationError",
        }
    }

    /// Process exit status used by the CLI. Zero is never returned.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParseError { .. } | Error::InvalidConfig(_) | Error::InvalidBudget(_) => 2,
            Error::OutputExists(_) => 3,
            Error::CohortsExhausted { .. } => 4,
            Error::TrainerFailure { .. } => 5,
            Error::MissingRunData(_) => 6,
            Error::ManifestError(_) => 7,
            Error::ShapeMismatch(_) | Error::SpacingMismatch(..) => 8,
            _ => 1,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
