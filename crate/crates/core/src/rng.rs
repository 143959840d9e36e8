//! Seed derivation for the reproducible random streams used across the crate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a sequence of stream identifiers into an
/// independent 64-bit seed (splitmix64 finalizer per component).
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    let mut state = splitmix(base ^ 0x5851_f42d_4c95_7f2d);
    for &s in stream {
        state = splitmix(state ^ splitmix(s.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    state
}

pub fn stream(base: u64, stream: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// Stream tags keep different consumers of one base seed apart.
pub(crate) const TAG_SYNTH: u64 = 1;
pub(crate) const TAG_PARTITION: u64 = 2;
pub(crate) const TAG_CENTRAL_SPLIT: u64 = 3;
pub(crate) const TAG_INIT: u64 = 4;
pub(crate) const TAG_SELECT: u64 = 5;
pub(crate) const TAG_LOCAL: u64 = 6;
