use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A distribution or copula parameter lies outside its admissible domain.
    #[error("parameter domain error: {0}")]
    ParameterDomain(String),

    /// An argument lies outside the domain of the operation (probabilities, series radius, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A precondition of the operation does not hold.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Power draws were rejected too often while sampling capacities.
    #[error("resample policy exceeded: {rejected} of {drawn} power draws were non-positive")]
    ResamplePolicy { rejected: usize, drawn: usize },

    /// An experiment configuration does not validate.
    #[error("invalid configuration at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::ParameterDomain(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
