use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },

    #[error("{file}: duplicate normalized key {key:?} (line {line})")]
    DuplicateKey { file: String, key: String, line: u64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("inconsistent priors: {0}")]
    InconsistentPriors(String),

    #[error("unknown name {0:?} and no fallback provider configured")]
    UnknownName(String),

    #[error("unknown geo unit {0:?}")]
    UnknownGeo(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("{what}: truncated at byte offset {offset} (needed {needed} more bytes)")]
    Truncated {
        what: &'static str,
        offset: u64,
        needed: u64,
    },

    #[error("race order stamp {found:?} does not match this build")]
    RaceOrderMismatch { found: String },

    #[error("embedding provenance mismatch: model expects {expected:?}, provider is {found:?}")]
    ProvenanceMismatch { expected: String, found: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(
        "training diverged at epoch {epoch}, {}: loss {loss}",
        batch.map(|b| format!("batch {b}")).unwrap_or_else(|| "validation pass".into())
    )]
    Diverged { epoch: usize, batch: Option<usize>, loss: f64 },

    #[error("all {} search trials failed: {}", failures.len(), failures.join("; "))]
    SearchFailed { failures: Vec<String> },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Attaches the file a decoding error came from.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::InFile { .. }) => e,
            e => Error::InFile {
                path: path.into(),
                source: Box::new(e),
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(file: impl Into<String>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            message: message.into(),
        }
    }
}
