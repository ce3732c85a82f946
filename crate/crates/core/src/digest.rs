//! SHA-256 helpers shared by the scorer cache and run manifests.

use sha2::{Digest, Sha256};
use std::io;
use std::path::Path;

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Digest of several fields, length-prefixed so that field boundaries matter.
pub fn sha256_fields<'a>(fields: impl IntoIterator<Item = &'a str>) -> String {
    let mut hasher = Sha256::new();
    for f in fields {
        hasher.update((f.len() as u64).to_le_bytes());
        hasher.update(f.as_bytes());
    }
    hex::encode(hasher.finalize())
}

pub fn file_sha256(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(std::fs::read(path)?))
}

/// Stable 64-bit seed derived from a digest of the given fields.
pub fn derive_seed<'a>(fields: impl IntoIterator<Item = &'a str>) -> u64 {
    let mut hasher = Sha256::new();
    for f in fields {
        hasher.update((f.len() as u64).to_le_bytes());
        hasher.update(f.as_bytes());
    }
    let out = hasher.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}
