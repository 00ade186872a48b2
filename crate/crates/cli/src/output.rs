//! Artifact writing. Result files contain no timestamps or machine
//! state, so a rerun with the same config is byte-identical; the
//! timestamp lives in the side-car provenance file only.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Schema(format!("cannot write {}: {e}", path.display()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| io_err(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct Provenance<'a> {
    command: &'a str,
    version: &'a str,
    /// Unix seconds; the one field allowed to differ between reruns.
    timestamp: u64,
    config_sha256: String,
    seed: u64,
    samples: usize,
}

/// Side-car `<out>.provenance.json` recording what produced `out`.
pub fn write_provenance(
    out: &Path,
    command: &str,
    config_raw: Option<&[u8]>,
    seed: u64,
    samples: usize,
) -> Result<(), CliError> {
    let sha = match config_raw {
        Some(bytes) => {
            let digest = Sha256::digest(bytes);
            digest.iter().map(|b| format!("{b:02x}")).collect()
        }
        None => String::from("none"),
    };
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let record = Provenance {
        command,
        version: env!("CARGO_PKG_VERSION"),
        timestamp,
        config_sha256: sha,
        seed,
        samples,
    };
    let path = PathBuf::from(format!("{}.provenance.json", out.display()));
    write_json(&path, &record)
}
