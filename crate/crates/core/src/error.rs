use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter or argument violated a documented precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A probability or entropy argument outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A ratio with a zero denominator (e.g. an empty sifted key).
    #[error("undefined: {0}")]
    Undefined(String),

    /// The source-tagged fraction of the sifted key reaches 1, so no
    /// privacy amplification can leave secret bits.
    #[error("no key possible: {0}")]
    NoKeyPossible(String),

    /// More double clicks than the pre-agreed threshold; the session's key
    /// must be thrown away.
    #[error("session discarded: {observed} double clicks exceed threshold {threshold}")]
    SessionDiscarded { observed: u64, threshold: u64 },
}

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}
