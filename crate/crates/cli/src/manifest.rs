//! Per-run inventory of configuration, schedule and written artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// A file the run read, identified by content only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Input {
    pub role: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub status: String,
    pub code_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub schedule_fingerprint: Option<String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub inputs: Vec<Input>,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(64);
    for b in Sha256::digest(bytes) {
        let _ = write!(out, "{b:02x}");
    }
    out
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn collect(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(&path, base, out)?;
        } else {
            out.push(path.strip_prefix(base).expect("walk stays under base").to_path_buf());
        }
    }
    Ok(())
}

fn relative_name(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Every file under `dir` except the manifest itself, in path order.
pub fn inventory(dir: &Path) -> CliResult<Vec<Artifact>> {
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    let mut artifacts: Vec<Artifact> = files
        .into_iter()
        .filter(|p| p != Path::new(MANIFEST_NAME))
        .map(|p| {
            let bytes = fs::read(dir.join(&p))?;
            Ok(Artifact {
                path: relative_name(&p),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            })
        })
        .collect::<CliResult<_>>()?;
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(artifacts)
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(MANIFEST_NAME);
        let mut text = serde_json::to_string_pretty(self).map_err(diffmark::Error::from)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }

    /// Every listed artifact exists with a matching hash, and nothing unlisted sits beside them.
    pub fn check(&self, dir: &Path) -> CliResult<()> {
        let actual = inventory(dir)?;
        if actual != self.artifacts {
            return Err(CliError::Check(format!(
                "manifest in {} does not match the directory contents",
                dir.display()
            )));
        }
        Ok(())
    }
}
