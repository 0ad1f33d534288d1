use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub params: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    /// sha256 of every input file, keyed by the path as given.
    pub input_digests: BTreeMap<String, String>,
    pub timestamp: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

impl RunManifest {
    pub fn new(command: &str, params: &impl Serialize, seed: Option<u64>, inputs: &[&Path]) -> std::io::Result<Self> {
        let mut input_digests = BTreeMap::new();
        for p in inputs {
            input_digests.insert(p.display().to_string(), file_digest(p)?);
        }
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Ok(Self {
            command: command.to_string(),
            params: serde_json::to_value(params).unwrap_or(serde_json::Value::Null),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            input_digests,
            timestamp,
        })
    }

    /// Writes `contents` to `path` and the manifest next to it.
    pub fn write_with(&self, path: &Path, contents: &str) -> std::io::Result<()> {
        std::fs::write(path, contents)?;
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(sidecar_path(path), json + "\n")
    }
}
