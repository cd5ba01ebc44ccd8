//! Deterministic seed derivation so every consumer of randomness (network
//! init, exploration, environment resets, evaluation) gets its own stream
//! from one run seed.

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives an independent seed from `(base, stream, index)`. Different
/// `stream` tags never collide in practice, so evaluation randomness can stay
/// fully separate from training randomness.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(stream)) ^ index)
}
