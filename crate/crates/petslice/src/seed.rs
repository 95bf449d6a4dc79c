//! Deterministic seed derivation.
//!
//! Every stage of the pipeline draws its own seed from the master seed via
//! `derive_seed(master, label)`. The derivation is FNV-1a over the master
//! seed's little-endian bytes followed by the label bytes, so it is stable
//! across platforms and library versions (unlike `std`'s `DefaultHasher`).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over arbitrary bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive a stage seed from the master seed and a stage label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut buf = Vec::with_capacity(8 + label.len());
    buf.extend_from_slice(&master.to_le_bytes());
    buf.extend_from_slice(label.as_bytes());
    fnv1a64(&buf)
}

/// Derive a seed with a numeric discriminant appended (per-patient, per-epoch, ...).
pub fn derive_seed_indexed(master: u64, label: &str, index: u64) -> u64 {
    let mut buf = Vec::with_capacity(16 + label.len());
    buf.extend_from_slice(&master.to_le_bytes());
    buf.extend_from_slice(label.as_bytes());
    buf.extend_from_slice(&index.to_le_bytes());
    fnv1a64(&buf)
}

/// The crate-standard deterministic RNG.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
