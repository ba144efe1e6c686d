//! Error-to-exit-code policy: 2 for anything the user wrote wrong
//! (config, shapes, impossible requests), 3 for the filesystem, 4 for
//! numeric failures at run time.

use std::fmt;

use persistnet::Error;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or structurally impossible request (exit 2).
    Config(String),
    /// Filesystem or file-format failure (exit 3).
    Io(String),
    /// Numeric failure: degenerate data, non-finite loss, broken
    /// reproducibility (exit 4).
    Numeric(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) | CliError::Io(msg) | CliError::Numeric(msg) => {
                f.write_str(msg)
            }
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidInput(_)
            | Error::DimMismatch { .. }
            | Error::InsufficientViews(_)
            | Error::InsufficientObjects(_)
            | Error::NoValidNegatives(_)
            | Error::SplitInfeasible(_)
            | Error::InsufficientCategories(_) => CliError::Config(msg),
            Error::Io(_) | Error::Format { .. } => CliError::Io(msg),
            Error::ZeroNormInput { .. }
            | Error::DegenerateInput(_)
            | Error::DegenerateIntra(_)
            | Error::NoRelevant(_)
            | Error::NonFiniteLoss { .. } => CliError::Numeric(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
