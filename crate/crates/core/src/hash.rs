//! Keyed hashing used wherever a decision must depend only on
//! `(seed, id)`: random scoring, dataset splits and provenance fingerprints.
//!
//! Construction: `SHA-256(seed as 8 little-endian bytes || utf8(key))`; the
//! first 8 digest bytes read as a little-endian `u64`. Unit-interval values
//! keep the top 53 bits, `(x >> 11) * 2^-53`, so they are uniform on `[0, 1)`
//! and identical on every platform.

use alloc::string::String;
use core::fmt::Write;

use sha2::{Digest, Sha256};

pub fn keyed_u64(seed: u64, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

pub fn keyed_unit(seed: u64, key: &str) -> f64 {
    (keyed_u64(seed, key) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Order-independent fingerprint of a set of ids (hex SHA-256 of the sorted,
/// newline-terminated ids).
pub fn fingerprint<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    let mut sorted: alloc::vec::Vec<&str> = ids.into_iter().collect();
    sorted.sort_unstable();
    let mut hasher = Sha256::new();
    for id in sorted {
        hasher.update(id.as_bytes());
        hasher.update(b"\n");
    }
    let mut out = String::with_capacity(64);
    for byte in hasher.finalize().iter() {
        let _ = write!(out, "{byte:02x}");
    }
    out
}
