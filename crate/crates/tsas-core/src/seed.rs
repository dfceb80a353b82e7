//! Deterministic per-sample seed derivation.
//!
//! Every stochastic decode gets its own seed derived from the run's base
//! seed, the example id, and the sample index, so a run replays identically
//! regardless of worker count or completion order.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over `base_seed (8 LE bytes) || id_len (8 LE bytes) || id bytes ||
/// sample_index (8 LE bytes)`. The length prefix keeps distinct
/// (id, index) pairs from colliding byte-wise. Stable across runs and
/// platforms.
pub fn derive_sample_seed(base_seed: u64, example_id: &str, sample_index: u32) -> u64 {
    let mut hash = FNV_OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(FNV_PRIME);
        }
    };
    eat(&base_seed.to_le_bytes());
    eat(&(example_id.len() as u64).to_le_bytes());
    eat(example_id.as_bytes());
    eat(&u64::from(sample_index).to_le_bytes());
    hash
}
