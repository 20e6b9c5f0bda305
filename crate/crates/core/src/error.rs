use alloc::string::String;

/// Error type shared by every operation in this crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Dimension or shape disagreement; the message names the shapes involved.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    /// A forward pass or optimizer step produced or consumed NaN/Inf.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// Misuse of the computation tape (detached loss, double backward, ...).
    #[error("tape error: {0}")]
    Tape(String),
    /// A caller-facing contract was violated (bad config, undefined metric, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Malformed serialized data (checkpoints, traces).
    #[error("decode error: {0}")]
    Decode(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
