//! Error type shared by every module in the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An environment index outside the declared environment set.
    #[error("invalid environment index {env}: {count} environments declared")]
    InvalidEnv { env: usize, count: usize },

    /// A precondition on the shape or content of an input failed.
    #[error("domain error: {0}")]
    Domain(String),

    /// Matrix or batch dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// More invariant directions requested than the kernel can supply.
    #[error("requested {requested} directions but the invariant kernel has dimension {available}")]
    KernelCapacity { requested: usize, available: usize },

    /// The two environments carry no usable distribution shift.
    #[error("degenerate distribution shift: {0}")]
    DegenerateShift(String),

    /// A computed quantity became non-finite.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A binary file failed to parse; `offset` is the first offending byte.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn dim(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn parse(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }
}
