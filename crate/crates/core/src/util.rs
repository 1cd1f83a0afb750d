//! Shared helpers: stable hashing and identifier construction.

use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of the given byte slices, concatenated in order with a
/// `0x1f` separator between parts so that `["ab", "c"]` and `["a", "bc"]`
/// hash differently.
pub fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0x1fu8]);
        }
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// First 16 hex chars of [`sha256_hex`]; enough for content-addressed node
/// ids at corpus scale while keeping files readable.
pub fn short_hash(parts: &[&[u8]]) -> String {
    sha256_hex(parts)[..16].to_string()
}

/// Raw 32-byte SHA-256 with the same part separator as [`sha256_hex`].
pub fn sha256_bytes(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0x1fu8]);
        }
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// FNV-1a 64-bit. Used where a fast, platform-stable, documented token hash
/// is needed (the bag-of-tokens mock embedder). Not cryptographic.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Chunk identifier: parent document id plus zero-padded ordinal. The
/// padding keeps lexicographic order equal to ordinal order.
pub fn chunk_id(doc_id: &str, ordinal: u32) -> String {
    format!("{doc_id}#{ordinal:04}")
}
