use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("state diverged: {0}")]
    DivergedState(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no viable sample: every rollout cost is infinite")]
    NoViableSample,

    #[error("feature length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("horizon mismatch: surrogate features need {expected} steps, plan has {actual}")]
    HorizonMismatch { expected: usize, actual: usize },

    #[error("surrogate model not loaded")]
    ModelNotLoaded,

    #[error("invalid model artifact: {0}")]
    Model(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged: non-finite loss in member {member} at epoch {epoch}")]
    TrainingDiverged { member: usize, epoch: usize },

    #[error("dataset schema error: expected {expected} columns, found {found} (line {line})")]
    Schema {
        expected: usize,
        found: usize,
        line: usize,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
