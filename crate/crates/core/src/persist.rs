//! Versioned JSON serialization of trained models, and atomic file writes.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "ctxens-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    model: T,
}

pub fn to_json<T: Serialize>(model: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&Envelope {
        format: FORMAT.to_string(),
        version: FORMAT_VERSION,
        model,
    })?)
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let env: Envelope<T> = serde_json::from_str(text)?;
    if env.format != FORMAT || env.version != FORMAT_VERSION {
        return Err(Error::ConfigInvalid(format!(
            "unsupported model file {} v{} (expected {FORMAT} v{FORMAT_VERSION})",
            env.format, env.version
        )));
    }
    Ok(env.model)
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
