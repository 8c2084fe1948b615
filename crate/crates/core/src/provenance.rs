//! Hashes and sidecars attached to exported files.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex sha-256 of the JSON serialization of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Metadata written next to every exported table.
#[derive(Debug, Clone, Serialize)]
pub struct Sidecar {
    pub config_hash: String,
    pub crate_version: &'static str,
    pub file: String,
}

impl Sidecar {
    pub fn new(config_hash: String, file: impl Into<String>) -> Self {
        Self { config_hash, crate_version: env!("CARGO_PKG_VERSION"), file: file.into() }
    }
}
