//! Content digests used for cache keys, fixture lookup and provenance.

use sha2::{Digest, Sha256};

pub fn sha256_bytes(bytes: impl AsRef<[u8]>) -> [u8; 32] {
    Sha256::digest(bytes.as_ref()).into()
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(sha256_bytes(bytes))
}

/// Digest of a text's exact UTF-8 bytes.
pub fn text_digest(text: &str) -> String {
    sha256_hex(text.as_bytes())
}
