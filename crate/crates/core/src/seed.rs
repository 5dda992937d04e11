//! Seed derivation: every random stream is `split_seed(root, counter)` for a
//! fixed, documented counter, so any stage can be rerun on its own.

/// SplitMix64 finalizer of `root + (counter + 1) * golden-ratio increment`.
pub fn split_seed(root: u64, counter: u64) -> u64 {
    let mut z = root.wrapping_add(counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
