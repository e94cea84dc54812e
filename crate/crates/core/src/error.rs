use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot ingest image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid label: {0}")]
    Label(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("fetch failed: {0}")]
    Fetch(String),

    #[error("unknown CID {0}")]
    UnknownCid(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Data(_) => "data",
            Error::Label(_) => "label",
            Error::NonFinite(_) => "non_finite",
            Error::Fetch(_) => "fetch",
            Error::UnknownCid(_) => "unknown_cid",
            Error::Checkpoint(_) => "checkpoint",
            Error::Incompatible(_) => "incompatible",
        }
    }
}
