use std::path::PathBuf;

use fragroup_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed JSON at byte {offset} (line {line}, column {column}): {message}")]
    Parse { offset: usize, line: usize, column: usize, message: String },
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid prototype: {0}")]
    Validation(String),
    #[error("unknown element uuid `{0}`")]
    UnknownUuid(String),
    #[error("group is not contiguous in traversal order: {0}")]
    Contiguity(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot split dataset: {0}")]
    Split(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("inputs are misaligned: {0}")]
    Alignment(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    TrainingDiverged { epoch: usize, detail: String },
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
