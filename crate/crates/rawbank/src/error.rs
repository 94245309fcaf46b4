use std::fmt;

/// Errors surfaced by the public API.
///
/// Internal shape invariants between private helpers are enforced with
/// `debug_assert!`; anything reachable from caller input gets a variant here.
#[derive(Debug)]
pub enum Error {
    /// Malformed or unsupported on-disk data. The message names the field
    /// or byte region that failed to parse.
    Format(String),
    /// A caller-supplied argument violates a documented precondition
    /// (bad shape, even kernel length, empty input, ...).
    Argument(String),
    /// A numeric parameter is outside its valid domain.
    Domain(String),
    /// Input is degenerate for the requested computation, e.g. normalizing
    /// a constant row with a zero stabilizer.
    Degenerate(String),
    /// Training diverged: a loss or gradient stopped being finite.
    /// Carries enough context to locate the offending step and parameter.
    Diverged(String),
    /// A synthesis recipe cannot be realized as specified.
    Synth(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Argument(m) => write!(f, "invalid argument: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Degenerate(m) => write!(f, "degenerate input: {m}"),
            Error::Diverged(m) => write!(f, "training diverged: {m}"),
            Error::Synth(m) => write!(f, "synthesis error: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
