use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error at {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}, line {line}: document is not valid UTF-8")]
    Utf8 { path: PathBuf, line: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("degenerate vocabulary: {0}")]
    DegenerateVocab(String),

    #[error("numerical domain error for token {token:?}: {msg}")]
    NumericalDomain { token: String, msg: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("shape mismatch: expected length {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("incompatible vocabularies: {0}")]
    Incompatible(String),

    #[error("logit provider violated its contract: {0}")]
    ProviderContract(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
