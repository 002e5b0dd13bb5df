use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),

    #[error("empty audio: {0}")]
    EmptyAudio(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label file line {line}: {message}")]
    Label { line: usize, message: String },

    #[error("curation: {0}")]
    Curation(String),

    #[error("feature file {path}: {message}")]
    FeatureFormat { path: PathBuf, message: String },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the input data rather than by the program
    /// or its configuration.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Config(_))
    }
}
