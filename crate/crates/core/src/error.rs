use std::io;

use thiserror::Error;

pub type Result<T, E = AdpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AdpError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("arithmetic range exceeded: {0}")]
    Range(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Schema {
        line: Option<usize>,
        message: String,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("malformed binary file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl AdpError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        AdpError::InvalidArgument(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        AdpError::InvalidState(msg.into())
    }

    pub(crate) fn range(msg: impl Into<String>) -> Self {
        AdpError::Range(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        AdpError::Format(msg.into())
    }

    /// Stable short code, used by the CLI and by foreign callers that
    /// cannot match on the enum.
    pub fn code(&self) -> &'static str {
        match self {
            AdpError::InvalidArgument(_) => "invalid_argument",
            AdpError::InvalidState(_) => "invalid_state",
            AdpError::Degenerate(_) => "degenerate_input",
            AdpError::Range(_) => "range",
            AdpError::Parse { .. } => "parse",
            AdpError::Schema { .. } => "schema",
            AdpError::Config { .. } => "config",
            AdpError::Format(_) => "format",
            AdpError::Io(_) => "io",
        }
    }

    /// Dotted path of the offending config field, when there is one.
    pub fn field_path(&self) -> Option<&str> {
        match self {
            AdpError::Config { path, .. } => Some(path),
            _ => None,
        }
    }

    /// Everything except I/O failures is a validation problem with the input.
    pub fn is_validation(&self) -> bool {
        !matches!(self, AdpError::Io(_))
    }
}
