use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),

    #[error("invalid genotype: {0}")]
    InvalidGenotype(String),

    #[error("unknown task {0:?}")]
    UnknownTask(String),

    #[error("non-finite input value at index {0}")]
    NonFiniteInput(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("gradient targets frozen module {module} of layer {layer}")]
    FrozenModule { layer: usize, module: usize },

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("no fitness recorded")]
    NoFitnessRecorded,

    #[error("label {label:?} of dataset {dataset:?} is not in the shared label space")]
    UnmappableLabel { label: String, dataset: String },

    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("mono required, found {0} channels")]
    MonoRequired(u16),

    #[error("sample rate {found} Hz does not match configured {expected} Hz; resample externally")]
    SampleRate { found: u32, expected: u32 },

    #[error("utterance shorter than one window ({samples} samples < {window})")]
    UtteranceTooShort { samples: usize, window: usize },

    #[error("invalid mel config: {0}")]
    InvalidMelConfig(String),

    #[error("split: {0}")]
    Split(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid synthetic spec: {0}")]
    Synthetic(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("AUC undefined: truths contain a single class")]
    AucUndefined,

    #[error("malformed container {path:?}: {reason}")]
    Container { path: PathBuf, reason: String },

    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
