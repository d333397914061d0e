//! Seedable, portable random streams.
//!
//! Every stochastic component draws from a ChaCha8 stream derived from a
//! user-visible `u64` seed plus a role tag, so independent trials get
//! independent streams and results are bit-reproducible under any degree of
//! parallelism. The derivation is a splitmix64 chain over (seed, tags...),
//! the same scheme a reimplementation in another language can follow.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 step; the standard finalizer constants.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a ChaCha8 stream from a base seed and a list of role tags.
///
/// The 256-bit ChaCha key is filled with successive splitmix64 outputs of a
/// state that has absorbed the seed and every tag in order.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0x517c_c1b7_2722_0a95;
    let _ = splitmix64(&mut state);
    for &t in tags {
        state ^= t.wrapping_mul(0x2545_f491_4f6c_dd1d);
        let _ = splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Role tags for the standard streams, kept in one place so the sampling
/// order is documented and stable.
pub mod tag {
    /// Pattern matrix of a retrieval task.
    pub const TASK_PATTERNS: u64 = 1;
    /// Query sampling during training.
    pub const TRAIN_QUERIES: u64 = 2;
    /// Query sampling during evaluation.
    pub const EVAL_QUERIES: u64 = 3;
    /// Model parameter initialization.
    pub const MODEL_INIT: u64 = 4;
    /// LM mini-batch window positions.
    pub const LM_BATCHES: u64 = 5;
    /// Dropout masks.
    pub const DROPOUT: u64 = 6;
    /// Property-check instance generation.
    pub const PROPERTY: u64 = 7;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let mut a = stream(7, &[tag::MODEL_INIT, 0]);
        let mut b = stream(7, &[tag::MODEL_INIT, 0]);
        let mut c = stream(7, &[tag::MODEL_INIT, 1]);
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn seed_changes_stream() {
        let mut a = stream(0, &[tag::TASK_PATTERNS]);
        let mut b = stream(1, &[tag::TASK_PATTERNS]);
        assert_ne!(a.next_u64(), b.next_u64());
    }
}
