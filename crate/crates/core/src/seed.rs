//! Seed derivation for independent, reproducible random streams.

use std::hash::Hasher;

use fnv::FnvHasher;

/// Stable 64-bit FNV-1a hash of a byte string.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Derives a child seed from a base seed and a label.
pub fn derive(base: u64, label: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&base.to_le_bytes());
    h.write(label.as_bytes());
    splitmix64(h.finish())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
