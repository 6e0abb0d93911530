use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped by cause so callers (the CLI in particular) can map
/// them onto distinct exit statuses.
#[derive(Debug, Error)]
pub enum MufiError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Other,
}

impl MufiError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            MufiError::Config(_) => ErrorKind::Config,
            MufiError::Data(_) | MufiError::Format(_) => ErrorKind::Data,
            MufiError::Numeric(_) => ErrorKind::Numeric,
            MufiError::Dimension { .. } | MufiError::Contract(_) | MufiError::Input(_) | MufiError::Io(_) => {
                ErrorKind::Other
            }
        }
    }

    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        MufiError::Dimension {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MufiError>;
