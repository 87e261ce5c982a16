use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("signal too short: {0}")]
    SignalTooShort(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("temporal alignment error: {0}")]
    Alignment(String),
    #[error("undefined reference: {0}")]
    UndefinedReference(String),
    #[error("degenerate mask: {0}")]
    DegenerateMask(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Dimension error naming both offending shapes.
    pub fn shape_mismatch(what: &str, a: &[usize], b: &[usize]) -> Self {
        Error::Dim(format!("{what}: {a:?} vs {b:?}"))
    }
}
