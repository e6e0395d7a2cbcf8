//! Error categories surfaced by the tooling, each with its own exit code.

use thiserror::Error;

/// Parse failures of the binary formats.
#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    Magic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("truncated payload at byte {0}")]
    Truncated(usize),
    #[error("corrupt payload: {0}")]
    Corrupt(String),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(#[from] FormatError),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("{0}")]
    Core(xspecies_core::Error),
}

impl From<xspecies_core::Error> for CliError {
    fn from(e: xspecies_core::Error) -> Self {
        match e {
            xspecies_core::Error::Config(m) => CliError::Config(m),
            xspecies_core::Error::NonFinite(m) => CliError::Numeric(m),
            other => CliError::Core(other),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl CliError {
    /// Process exit code: 2 config, 3 io or format, 4 numeric, 5 other input errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) | CliError::Format(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Core(_) => 5,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) | CliError::Format(_) => "io",
            CliError::Numeric(_) => "numeric",
            CliError::Core(_) => "input",
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
