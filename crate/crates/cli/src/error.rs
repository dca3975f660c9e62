use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 1;
    pub const DATA: i32 = 2;
    pub const RUNTIME: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("{failed} of {total} inputs failed to extract")]
    PartialExtract { failed: usize, total: usize },
    #[error("{0}")]
    Data(pathnet::Error),
    #[error("{0}")]
    Runtime(pathnet::Error),
    #[error("{0}")]
    Report(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::ConfigParse { .. } => exit::CONFIG,
            CliError::PartialExtract { .. } | CliError::Data(_) => exit::DATA,
            CliError::Runtime(_) | CliError::Report(_) => exit::RUNTIME,
        }
    }
}

impl From<pathnet::Error> for CliError {
    fn from(e: pathnet::Error) -> Self {
        use pathnet::Error as E;
        match e {
            E::InvalidHyperParams(m) | E::InvalidMelConfig(m) => CliError::Config(m),
            E::UnmappableLabel { .. }
            | E::UnsupportedEncoding(_)
            | E::MonoRequired(_)
            | E::SampleRate { .. }
            | E::UtteranceTooShort { .. }
            | E::Split(_)
            | E::Manifest(_)
            | E::Synthetic(_)
            | E::Container { .. }
            | E::Io { .. }
            | E::Wav(_)
            | E::Image(_)
            | E::Csv(_)
            | E::Json(_)
            | E::EmptyTrainingSet
            | E::NonFiniteInput(_) => CliError::Data(e),
            other => CliError::Runtime(other),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
