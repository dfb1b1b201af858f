//! Deterministic seed derivation for parallel replication.
//!
//! Derived streams use a SplitMix64 finalizer over `root + (stream+1) * phi`
//! (phi = the 64-bit golden-ratio constant), so replicate `k` always sees
//! the same seed no matter how work is scheduled across threads.

/// SplitMix64 output function.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Independent stream seed for `(root, stream)`.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    splitmix64(root.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E3779B97F4A7C15)))
}
