//! Line-delimited JSON readers and writers for pair, score, and metadata
//! records.

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Preference pair on the wire: ids plus optional SAS fields. Features are
/// carried separately in embedding files and joined by id.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub pair_id: u64,
    pub chosen_id: usize,
    pub rejected_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sas_chosen: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sas_rejected: Option<f64>,
}

/// One SAS score keyed by response position.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SasRecord {
    pub prompt_id: usize,
    pub response_index: usize,
    pub sas: f64,
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(&line).map_err(|e| {
            Error::format(
                path.display().to_string(),
                format!("line {}: {e}", lineno + 1),
            )
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Writes CSV text to a file, creating parent directories as needed.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(path.display().to_string(), e))?;
        }
    }
    let mut f =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}
