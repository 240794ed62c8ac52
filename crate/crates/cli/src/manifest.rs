//! Run-directory manifest: every output file with its size and SHA-256.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_at, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub seed: u64,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn entry(dir: &Path, path: &Path) -> Result<FileEntry> {
    let bytes = std::fs::read(path).map_err(io_at(path))?;
    let rel = path.strip_prefix(dir).unwrap_or(path);
    Ok(FileEntry {
        path: rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/"),
        bytes: bytes.len() as u64,
        sha256: sha256_hex(&bytes),
    })
}

/// Writes `manifest.json` into `dir` listing `files` in path order.
pub fn write_manifest(dir: &Path, command: &str, seed: u64, files: &[PathBuf]) -> Result<Manifest> {
    let mut files = files
        .iter()
        .map(|p| entry(dir, p))
        .collect::<Result<Vec<_>>>()?;
    files.sort_by(|a, b| a.path.cmp(&b.path));
    files.dedup_by(|a, b| a.path == b.path);
    let manifest = Manifest {
        format: "epiflow-run".into(),
        version: 1,
        command: command.into(),
        seed,
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(io_at(&path))?;
    Ok(manifest)
}

/// Recomputes every listed digest; returns the paths that no longer match.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_at(&path))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut stale = Vec::new();
    for f in &manifest.files {
        let current = std::fs::read(dir.join(&f.path)).ok();
        if current.as_deref().map(sha256_hex).as_deref() != Some(f.sha256.as_str()) {
            stale.push(f.path.clone());
        }
    }
    Ok(stale)
}
