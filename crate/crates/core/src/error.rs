use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed file header or frame.
    #[error("format error: {0}")]
    Format(String),
    /// Non-finite or otherwise invalid numeric payload.
    #[error("data error: {0}")]
    Data(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("shape error: {0}")]
    Shape(String),
    /// A testing-only dense/explicit construction exceeded its size cap.
    #[error("size error: {0}")]
    Size(String),
    /// Denoiser session failure (launch, broken pipe, worker-reported error).
    #[error("session error: {0}")]
    Session(String),
    #[error("protocol version mismatch: client speaks {client}, worker replied {worker}")]
    VersionMismatch { client: u32, worker: u32 },
    #[error("timeout: {0}")]
    Timeout(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format(_) => "format",
            Error::Data(_) => "data",
            Error::Parameter(_) => "parameter",
            Error::Shape(_) => "shape",
            Error::Size(_) => "size",
            Error::Session(_) => "session",
            Error::VersionMismatch { .. } => "version-mismatch",
            Error::Timeout(_) => "timeout",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
