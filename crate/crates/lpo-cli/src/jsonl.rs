//! JSON Lines IO for preference pairs and (prompt, ground-truth) corpora.
//!
//! One UTF-8 JSON object per line with stable field order, so identical
//! inputs and seeds reproduce identical file bytes.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use lpo_core::pairs::PreferencePair;
use lpo_core::policy::Token;
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

/// One corpus record for the pair builders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub prompt: Vec<Token>,
    pub ground_truth: Vec<Token>,
}

/// Serializes pairs, one JSON object per line.
pub fn encode_pairs(pairs: &[PreferencePair]) -> Result<String> {
    let mut out = String::new();
    for pair in pairs {
        let line = serde_json::to_string(pair)
            .map_err(|e| CliError::runtime(format!("pair serialization failed: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_pairs(path: &Path, pairs: &[PreferencePair]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(encode_pairs(pairs)?.as_bytes())?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<PreferencePair>> {
    read_lines(path, "pair")
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| CliError::runtime(format!("record serialization failed: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<(Vec<Token>, Vec<Token>)>> {
    let records: Vec<DatasetRecord> = read_lines(path, "dataset record")?;
    Ok(records
        .into_iter()
        .map(|r| (r.prompt, r.ground_truth))
        .collect())
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<Vec<T>> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::runtime(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            CliError::runtime(format!("{}:{}: bad {what}: {e}", path.display(), i + 1))
        })?;
        out.push(item);
    }
    Ok(out)
}
