use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use spcrf::pipeline::StageError;

/// A failed invocation and its exit status class.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, unreadable or malformed inputs, inconsistent shapes.
    Precondition(String),
    /// A stage broke a guarantee it makes about its own output.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Precondition(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        CliError::Precondition(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Precondition(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<StageError> for CliError {
    fn from(e: StageError) -> Self {
        if e.is_internal() {
            CliError::Internal(e.to_string())
        } else {
            CliError::Precondition(e.to_string())
        }
    }
}

/// Tags a core error with the path or step it came from.
pub trait Context<T> {
    fn context(self, what: impl fmt::Display) -> Result<T, CliError>;
}

impl<T> Context<T> for spcrf::Result<T> {
    fn context(self, what: impl fmt::Display) -> Result<T, CliError> {
        self.map_err(|e| match e {
            spcrf::Error::Internal(_) => CliError::Internal(format!("{what}: {e}")),
            _ => CliError::Precondition(format!("{what}: {e}")),
        })
    }
}

/// Encoded output files, written together once everything has succeeded.
#[derive(Debug, Default)]
pub struct Outputs(Vec<(PathBuf, Vec<u8>)>);

impl Outputs {
    pub fn add(&mut self, path: impl AsRef<Path>, bytes: Vec<u8>) {
        self.0.push((path.as_ref().to_path_buf(), bytes));
    }

    pub fn commit(self) -> Result<(), CliError> {
        for (path, _) in &self.0 {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| CliError::precondition(format!("{}: {e}", parent.display())))?;
            }
        }
        for (path, bytes) in self.0 {
            fs::write(&path, bytes).map_err(|e| CliError::precondition(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}
