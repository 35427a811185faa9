use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to point at the
/// offending input (parameter name, file line, formula term) rather than
/// just a category.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("out of support: {0}")]
    OutOfSupport(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("infeasible constraint: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
