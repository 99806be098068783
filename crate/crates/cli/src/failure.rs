use std::fmt;

use acvae_core::Error;

/// Process exit statuses.
pub mod code {
    pub const OTHER: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const DATA: u8 = 3;
    pub const NUMERIC: u8 = 4;
    pub const VERSION: u8 = 5;
}

/// A one-line diagnostic plus the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: code::USAGE,
            message: message.into(),
        }
    }

    pub fn data(err: impl fmt::Display) -> Self {
        Self {
            code: code::DATA,
            message: err.to_string(),
        }
    }

    pub fn other(err: impl fmt::Display) -> Self {
        Self {
            code: code::OTHER,
            message: err.to_string(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFiniteGradient { .. } | Error::NonFiniteParameter { .. } | Error::NonFiniteLoss { .. } => {
                code::NUMERIC
            }
            Error::CheckpointVersion { .. } => code::VERSION,
            Error::Idx(_) | Error::LabelOutOfRange { .. } => code::DATA,
            Error::InvalidConfig(_) | Error::UnsupportedMode { .. } => code::USAGE,
            _ => code::OTHER,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::other(e)
    }
}

pub type CliResult<T> = Result<T, Failure>;
