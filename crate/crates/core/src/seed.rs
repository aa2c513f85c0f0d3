//! Named, independent random sub-streams derived from one run seed.

/// SplitMix64 finalizer applied to `seed ⊕ golden·(value + 1)`.
pub fn mix(seed: u64, value: u64) -> u64 {
    let mut z = seed ^ value.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the sub-stream called `name` (e.g. `"scene"`, `"noise"`).
pub fn substream(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name keeps the mapping stable across platforms.
    let hash = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    });
    mix(seed, hash)
}
