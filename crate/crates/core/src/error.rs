use thiserror::Error;

/// Errors raised by the library. Numerical warnings go through `log` instead.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dimension {0}: only d = 1 and d = 2 are implemented")]
    Dimension(usize),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("no kernel path for symbol `{symbol}`: {reason}")]
    KernelPath { symbol: String, reason: String },
    #[error("size guard: {0}")]
    SizeGuard(String),
    #[error("incompatible operands: {0}")]
    Mismatch(String),
    #[error("malformed input: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}

pub(crate) fn check_dim(d: usize) -> Result<()> {
    if d == 1 || d == 2 {
        Ok(())
    } else {
        Err(Error::Dimension(d))
    }
}
