//! Deterministic seed derivation.

/// SplitMix64 finalizer over `seed` combined with `tag`.
pub fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds several tags into one derived seed.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(seed, |s, &t| mix(s, t))
}
