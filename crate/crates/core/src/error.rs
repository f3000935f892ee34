use std::path::PathBuf;

/// Errors produced while loading market data, pricing or calibrating.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("maturity {maturity} outside curve range [{min}, {max}]")]
    Range { maturity: f64, min: f64, max: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate loading on segment {segment}: zero volatility norm with non-zero correlation term")]
    DegenerateLoading { segment: usize },

    #[error("numerical overflow in characteristic function on segment {segment}")]
    NumericalOverflow { segment: usize },

    #[error("singular segment {segment}: E_j vanished")]
    SingularSegment { segment: usize },

    #[error("pricing failed for quote {quote}: {source}")]
    Quote {
        quote: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
