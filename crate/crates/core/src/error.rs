use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or extents that do not satisfy an operation's contract.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("degenerate reference: reference field has zero norm")]
    DegenerateReference,

    #[error("degenerate statistics: {0}")]
    DegenerateStatistics(String),

    #[error("oracle scale exceeded: {points} points > limit {limit}")]
    OracleScale { points: usize, limit: usize },

    #[error("resource budget exceeded: {0}")]
    Resource(String),

    #[error("training diverged at iteration {iter}: {detail}")]
    Divergence { iter: usize, detail: String },

    #[error("numerical failure: {detail} (residual {residual:e})")]
    Numerical { detail: String, residual: f64 },

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
