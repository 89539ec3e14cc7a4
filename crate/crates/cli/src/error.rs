use std::fmt;

use aitm_core::Error;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    /// All configuration problems in one message.
    pub fn config(problems: Vec<String>) -> Self {
        let mut message = format!("invalid configuration ({} problem(s)):", problems.len());
        for p in problems {
            message.push_str("\n  - ");
            message.push_str(&p);
        }
        Self::usage(message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::UnsupportedVariant(_) => EXIT_USAGE,
            Error::Ingest(_)
            | Error::RejectedRow { .. }
            | Error::Encoding(_)
            | Error::Schema(_)
            | Error::Artifact(_)
            | Error::Io(_) => EXIT_DATA,
            Error::Dimension { .. }
            | Error::Contract(_)
            | Error::Domain(_)
            | Error::UndefinedMetric(_)
            | Error::NonFiniteGradient(_)
            | Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}
