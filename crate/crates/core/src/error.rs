use std::fmt;

/// Errors produced by the style-transfer engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{stage}: {message}")]
    Decode { stage: &'static str, message: String },

    #[error("empty image")]
    EmptyImage,

    #[error("{what} = {value} is outside [0, 1]")]
    Range { what: String, value: f64 },

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("load error: {0}")]
    Load(String),

    #[error("invalid config: {field}: {message}")]
    Config { field: String, message: String },

    #[error("size error: {0}")]
    Size(String),

    #[error("non-finite loss at iteration {iteration}: {report}")]
    NonFinite { iteration: usize, report: String },

    #[error("encode error: {0}")]
    Encode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl fmt::Display) -> Self {
        Error::Config {
            field: field.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn range(what: impl Into<String>, value: f64) -> Self {
        Error::Range {
            what: what.into(),
            value,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
