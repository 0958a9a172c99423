//! Order-independent seed derivation.

use sha2::{Digest, Sha256};

/// Derives a child seed from a global seed, a namespace tag and a list of
/// string parts. The result depends only on the inputs, never on the order in
/// which workers happen to request seeds.
pub fn derive(global: u64, namespace: &str, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update((namespace.len() as u64).to_le_bytes());
    h.update(namespace.as_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Short hex digest of arbitrary bytes, used for config and payload hashes.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
