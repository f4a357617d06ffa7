use thiserror::Error;

/// Errors surfaced by the simulator and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Unsupported or inconsistent configuration (e.g. a QAM order we do not build).
    #[error("configuration error: {0}")]
    Config(String),
    /// A value did not match any constellation point or amplitude class.
    #[error("lookup error: {0}")]
    Lookup(String),
    /// A special-function argument outside its domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// Caller misuse: mismatched dimensions, empty grids, bad counts.
    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;
