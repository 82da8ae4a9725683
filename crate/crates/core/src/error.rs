use thiserror::Error;

use crate::param_family::ParseError;

/// Errors shared by every numerical routine in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{what}: {needed} exceeds cap {cap}{}", advice.map(|a| format!(" ({a})")).unwrap_or_default())]
    CapExceeded {
        what: &'static str,
        needed: u128,
        cap: u128,
        advice: Option<&'static str>,
    },

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("domain error in `{location}`: {reason}")]
    Domain { location: String, reason: &'static str },

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("numeric overflow: {0}")]
    Overflow(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}

pub(crate) fn check_cap(what: &'static str, needed: u128, cap: u128) -> Result<()> {
    if needed > cap {
        Err(Error::CapExceeded { what, needed, cap, advice: None })
    } else {
        Ok(())
    }
}
