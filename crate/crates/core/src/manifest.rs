//! Run manifests written next to every command's outputs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the canonical configuration text.
    pub config_digest: String,
    pub seed: Option<u64>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub version: String,
    pub nonconverged: Vec<(String, usize)>,
    /// Free-form settings worth recording (calibrated censoring, interval laws).
    pub notes: Vec<(String, String)>,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn digest(config: &str) -> String {
    let hash = Sha256::digest(config.as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn start(command: &str, config: &str, seed: Option<u64>) -> Self {
        let t = now_ms();
        Self {
            command: command.to_string(),
            config_digest: digest(config),
            seed,
            started_unix_ms: t,
            finished_unix_ms: t,
            version: env!("CARGO_PKG_VERSION").to_string(),
            nonconverged: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    pub fn finish(mut self) -> Self {
        self.finished_unix_ms = now_ms();
        self
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n")
    }
}
