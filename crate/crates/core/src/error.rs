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

    #[error("{context} line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("duplicate passage id `{0}`")]
    DuplicatePassage(String),

    #[error("checksum mismatch in {0}")]
    Checksum(PathBuf),

    #[error("unsupported format version {found} in {path} (supported: {supported})")]
    Version {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("corrupt index file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },

    #[error("shard search failed for shard(s) {0:?}")]
    ShardFailure(Vec<u32>),

    #[error("remote scorer: {0}")]
    Remote(String),

    #[error("remote scorer timed out")]
    RemoteTimeout,

    #[error("network: {0}")]
    Network(String),

    #[error("query pool exhausted after {0} draws")]
    PoolExhausted(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            line,
            message: message.into(),
        }
    }
}
