//! Artifact provenance: format version, config hash, seed.
//!
//! Every artifact the crate writes (corpus, checkpoints, loss curves, reports,
//! wav sidecars) embeds this triple. Two artifacts with equal triples are
//! byte-identical, which is what the determinism audits hash.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Format version stamped into every artifact this build writes.
pub const FORMAT_VERSION: u32 = 1;

/// Provenance triple embedded in every artifact file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new<C: Serialize>(config: &C, seed: u64) -> Result<Self> {
        Ok(Provenance {
            format_version: FORMAT_VERSION,
            config_hash: config_hash(config)?,
            seed,
        })
    }
}

/// Stable hash of a config: sha256 over its canonical JSON, truncated to 16
/// hex chars. Struct field order is fixed by declaration, so the encoding is
/// stable for a given build.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let json = serde_json::to_string(config)?;
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(16);
    for byte in digest.iter().take(8) {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Cfg {
        a: u32,
        b: String,
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let c1 = Cfg { a: 1, b: "x".into() };
        let c2 = Cfg { a: 2, b: "x".into() };
        assert_eq!(config_hash(&c1).unwrap(), config_hash(&c1).unwrap());
        assert_ne!(config_hash(&c1).unwrap(), config_hash(&c2).unwrap());
        assert_eq!(config_hash(&c1).unwrap().len(), 16);
    }
}
