//! Deterministic seed derivation.
//!
//! Per-trial seeds are derived from a master seed and a trial index through a
//! splittable 64-bit hash, so the seed of trial `i` never depends on how many
//! trials run or in which order they complete.

/// One round of the splitmix64 output function.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed for stream `index` of a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// FNV-1a over a byte string; used to fold candidate ids into seeds.
///
/// Pinned here rather than `DefaultHasher` so derived seeds are stable across
/// Rust releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}
