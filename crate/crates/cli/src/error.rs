//! CLI errors and their exit codes: 1 usage/schema, 2 runtime, 3 I/O.

use std::fmt;

use previewflow::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage,
    Runtime,
    Io,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Usage => 1,
            ExitKind::Runtime => 2,
            ExitKind::Io => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Usage,
            message: msg.into(),
        }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Runtime,
            message: msg.into(),
        }
    }

    pub fn io(msg: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Io,
            message: msg.into(),
        }
    }

    pub fn code(&self) -> i32 {
        self.kind.code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Integration { .. } | Error::Training { .. } | Error::Degenerate(_) => ExitKind::Runtime,
            Error::Io(_) | Error::Format(_) => ExitKind::Io,
            Error::Dimension(_)
            | Error::Shape { .. }
            | Error::Contract(_)
            | Error::Divisibility { .. }
            | Error::OutOfBounds { .. }
            | Error::Config(_)
            | Error::Json(_) => ExitKind::Usage,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::io(format!("serialization: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
