use sha2::{Digest, Sha256};

/// First 16 hex digits of the SHA-256 of `bytes`. Stable across processes and platforms.
pub fn short_hash(bytes: impl AsRef<[u8]>) -> String {
    let digest = Sha256::digest(bytes.as_ref());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// 64-bit seed derived from the SHA-256 of `bytes`.
pub fn seed_from(bytes: impl AsRef<[u8]>) -> u64 {
    let digest = Sha256::digest(bytes.as_ref());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
