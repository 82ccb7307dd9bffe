//! Run manifests: what was run, with which seeds, and checksums of every
//! emitted file.

use std::path::{Path, PathBuf};

use ctxens_core::persist::write_atomic;
use ctxens_core::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileEntry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl FileEntry {
    pub fn hash(dir: &Path, path: &Path) -> Result<Self> {
        let data = std::fs::read(path)?;
        Ok(Self {
            path: path.strip_prefix(dir).unwrap_or(path).to_path_buf(),
            sha256: hex::encode(Sha256::digest(&data)),
            bytes: data.len() as u64,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub cli: &'static str,
    pub core: &'static str,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            cli: env!("CARGO_PKG_VERSION"),
            core: ctxens_core::VERSION,
        }
    }
}

#[derive(Debug, Default, Serialize)]
pub struct Seeds {
    pub experiment: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<u64>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub command: &'static str,
    pub config: C,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub seeds: Seeds,
    pub versions: Versions,
    pub files: Vec<FileEntry>,
    /// Wall-clock seconds per stage.
    pub timings: Vec<(String, f64)>,
}

impl<C: Serialize> RunManifest<C> {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}
