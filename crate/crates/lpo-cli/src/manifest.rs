//! Run manifests: one JSON document per command invocation capturing the
//! resolved configuration, seeds, input/output content digests, and wall
//! time. `duration_ms` is the only field that varies between otherwise
//! identical runs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Result;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub duration_ms: u128,
}

/// Collects digests while a command runs, then writes the manifest.
pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    seed: u64,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: serde_json::Value, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.push(digest);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.outputs.push(digest);
        Ok(())
    }

    /// Writes `manifest.json` (or the given file name) and returns its path.
    pub fn write(self, path: &Path) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            duration_ms: self.started.elapsed().as_millis(),
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| crate::CliError::runtime(format!("manifest serialization: {e}")))?;
        std::fs::write(path, text + "\n")?;
        Ok(path.to_path_buf())
    }
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex_digest(&hasher.finalize()),
    })
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
