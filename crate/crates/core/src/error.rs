use alloc::string::String;

/// Errors produced by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Missing or inconsistent configuration (weights, shapes, hyperparameters).
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller broke an operation's precondition (shape or lattice mismatch).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A numeric argument is outside its domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// Geometry that cannot be solved (collinear corners, singular matrices).
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    /// A loss had nothing to average over.
    #[error("no valid points: {0}")]
    NoValidPoints(String),
    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Diverged(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! contract {
    ($($arg:tt)*) => { $crate::error::Error::Contract(alloc::format!($($arg)*)) };
}
pub(crate) use contract;
