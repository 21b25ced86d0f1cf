use sha2::{Digest, Sha256};

/// Hex SHA-256 over the parts, each terminated by a NUL byte so that
/// `["ab", "c"]` and `["a", "bc"]` differ.
pub fn sha256_hex(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

/// Key under which scripted runners look up the behavior of a code string.
pub fn code_fingerprint(code: &str) -> String {
    sha256_hex(&[code])
}
