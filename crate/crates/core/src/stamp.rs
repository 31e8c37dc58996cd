//! Provenance stamp carried by every artifact a run writes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStamp {
    pub config_sha256: String,
    pub seed: u64,
}

impl RunStamp {
    /// Hashes the canonical bytes of a configuration.
    pub fn new(config_bytes: &[u8], seed: u64) -> Self {
        Self { config_sha256: hex::encode(Sha256::digest(config_bytes)), seed }
    }

    /// First line of stamped CSV files.
    pub fn csv_comment(&self) -> String {
        format!("# config_sha256={} seed={}\n", self.config_sha256, self.seed)
    }

    /// Strips a leading stamp comment, if any.
    pub fn strip_comment(csv: &str) -> &str {
        match csv.strip_prefix("# config_sha256=") {
            Some(rest) => rest.split_once('\n').map_or("", |(_, body)| body),
            None => csv,
        }
    }
}

/// Prefixes `body` with the stamp comment when a stamp is given.
pub fn stamped_csv(stamp: Option<&RunStamp>, body: &str) -> String {
    match stamp {
        Some(s) => s.csv_comment() + body,
        None => body.to_string(),
    }
}
