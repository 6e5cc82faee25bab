//! Error types shared across the engine.

/// Errors raised by the numeric core, the reference model and the fused
/// executor.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    /// Matrix dimensions do not line up for the requested operation.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An argument is outside the operation's domain.
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// Inputs are structurally valid but inconsistent with each other or
    /// with the configured state (e.g. precision mismatch, incomplete cache).
    #[error("state error in {op}: {detail}")]
    State { op: &'static str, detail: String },
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain { op, detail: detail.into() }
    }

    pub fn state(op: &'static str, detail: impl Into<String>) -> Self {
        Error::State { op, detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
