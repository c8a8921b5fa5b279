use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a command: the resolved configuration, the
/// seed, and digests of the inputs it read.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    /// Invocation that reproduces the outputs from the files in the run directory.
    pub replay: Vec<String>,
    pub config: Value,
    pub seed: u64,
    pub workers: Option<usize>,
    pub started: String,
    pub finished: String,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Digest of an input file; a missing file is a validation error.
pub fn digest(path: &Path) -> Result<InputDigest, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let hash = Sha256::digest(&bytes);
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hash.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        flps::io::atomic_write(&dir.join("manifest.json"), text.as_bytes())?;
        Ok(())
    }
}
