//! Provenance stamps: tool version plus a SHA-256 over the run's inputs.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    /// 64 lowercase hex characters.
    pub config_hash: String,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} sha256:{}", self.tool, self.version, self.config_hash)
    }
}

/// Incremental hash over length-prefixed parts, so `["ab", "c"]` and
/// `["a", "bc"]` differ.
#[derive(Default)]
pub struct StampBuilder {
    hasher: Sha256,
}

impl StampBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn part(mut self, bytes: &[u8]) -> Self {
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
        self
    }

    pub fn json<T: Serialize>(self, value: &T) -> Result<Self> {
        Ok(self.part(&serde_json::to_vec(value)?))
    }

    pub fn file(self, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(self.part(&bytes))
    }

    pub fn finish(self) -> Provenance {
        Provenance {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            config_hash: hex::encode(self.hasher.finalize()),
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
