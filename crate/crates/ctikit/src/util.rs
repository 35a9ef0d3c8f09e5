//! Digest, seeding, and text-normalization helpers shared across modules.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// SHA-256 over length-framed parts, so `["ab","c"]` and `["a","bc"]` never
/// collide.
pub fn framed_digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// Hex form of [`framed_digest`].
pub fn framed_digest_hex(parts: &[&[u8]]) -> String {
    hex::encode(framed_digest(parts))
}

/// Derives a child seed from a master seed and a string tag.
///
/// Used wherever a job-level seed must fan out into independent per-item
/// streams (per-CVE generation, per-row experiment draws). The derivation is
/// position-independent: permuting the items does not change any item's seed.
pub fn derive_seed(master_seed: u64, tag: &str) -> [u8; 32] {
    framed_digest(&[&master_seed.to_le_bytes(), tag.as_bytes()])
}

/// Seeded, portable RNG for a (master seed, tag) pair.
pub fn seeded_rng(master_seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(master_seed, tag))
}

/// Canonical form for label-set members: case-folded and trimmed.
pub fn canonical_label(raw: &str) -> String {
    raw.trim().to_lowercase()
}

/// Canonical form for cache-key entities: lowercase, trimmed, internal
/// whitespace collapsed to single spaces.
pub fn canonical_entity(raw: &str) -> String {
    raw.trim()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Whitespace-delimited token count, the crate-wide canonical tokenization.
pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}
