//! File formats and run plumbing for the preference-optimization lab:
//! policy checkpoints, JSON Lines pair files, CSV emitters, flat key-value
//! config files, run manifests, and Markdown report rendering.
//!
//! Everything written here is byte-deterministic for fixed inputs; the one
//! exception is the `duration_ms` field of a run manifest.

pub mod checkpoint;
pub mod csvio;
pub mod jsonl;
pub mod kvconfig;
pub mod manifest;
pub mod report;

/// Error type shared by the format modules and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config keys, or input validation; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Failures while running; exit code 1.
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    /// The process exit code this error maps to.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
