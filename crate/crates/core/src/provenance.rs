use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Which command produced an artifact, and under which effective configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(command: impl Into<String>, config: &impl Serialize) -> Self {
        Provenance {
            command: command.into(),
            config_hash: config_hash(config),
        }
    }
}

/// First 16 hex digits of the SHA-256 of the value's JSON encoding.
pub fn config_hash(config: &impl Serialize) -> String {
    let json = serde_json::to_vec(config).expect("configuration serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}
