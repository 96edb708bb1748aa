use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct InputFingerprint {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

pub fn fingerprint(path: &Path) -> Result<InputFingerprint, CliError> {
    let bytes = std::fs::read(path)?;
    Ok(InputFingerprint {
        path: path.to_path_buf(),
        sha256: format!("{:x}", Sha256::digest(&bytes)),
        bytes: bytes.len() as u64,
    })
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Sits beside every output: what ran, on which input, with which settings.
#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub command: &'static str,
    pub version: &'static str,
    pub core_version: &'static str,
    pub config: C,
    pub inputs: Vec<InputFingerprint>,
    pub seed: u64,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<PathBuf>,
}

impl<C: Serialize> RunManifest<C> {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::arg("internal.manifest", format!("cannot serialize manifest: {e}")))?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}
