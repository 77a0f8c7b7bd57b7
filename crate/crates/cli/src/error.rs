use std::fmt;
use std::path::Path;

use drivesynth_core::Error as CoreError;
use serde::Serialize;

/// A failure classified by exit code: 1 for anything the user can fix
/// before running (bad arguments, config, inputs), 2 for runtime failures.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Runtime(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Validation(_) => "validation",
            CliError::Runtime(_) => "runtime",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            error: Inner<'a>,
        }
        #[derive(Serialize)]
        struct Inner<'a> {
            kind: &'a str,
            exit_code: i32,
            message: &'a str,
        }
        serde_json::to_string(&Body {
            error: Inner {
                kind: self.kind(),
                exit_code: self.exit_code(),
                message: self.message(),
            },
        })
        .expect("plain strings serialize")
    }

    pub fn missing(what: &str, path: &Path, hint: &str) -> Self {
        CliError::Validation(format!("{what} not found: {} ({hint})", path.display()))
    }

    pub fn write(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Runtime(format!("cannot write {}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind(), self.message())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::NonFinite(_)
            | CoreError::NonFiniteLoss { .. }
            | CoreError::Shape(_)
            | CoreError::StaleCache(_)
            | CoreError::LayerDimension { .. }
            | CoreError::Io { .. } => CliError::Runtime(msg),
            _ => CliError::Validation(msg),
        }
    }
}
