//! Flat key-value config files: `key = value` lines, `#` comments.
//!
//! Commands resolve each setting as: explicit flag, else config file
//! entry, else default. Unknown keys and missing required keys are usage
//! errors that name the key.

use std::collections::BTreeMap;
use std::path::Path;

use crate::{CliError, Result};

/// Parsed config file contents.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::usage(format!(
                    "config line {}: expected `key = value`, found `{raw}`",
                    i + 1
                )));
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(CliError::usage(format!("config line {}: empty key", i + 1)));
            }
            entries.insert(key, value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Rejects keys outside the allowed set, naming the offender.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for key in self.entries.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::usage(format!("unknown config key: {key}")));
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    /// Typed lookup; parse failures are usage errors naming the key.
    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| CliError::usage(format!("config key {key}: cannot parse `{raw}`"))),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Resolves a setting from flag, then config, then default.
pub fn resolve<T: Clone>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

/// Resolves a required setting; absence is a usage error naming the key.
pub fn resolve_required<T>(flag: Option<T>, config: Option<T>, key: &str) -> Result<T> {
    flag.or(config)
        .ok_or_else(|| CliError::usage(format!("missing config key: {key}")))
}
