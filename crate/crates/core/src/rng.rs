//! Deterministic per-path random streams.
//!
//! Every Monte-Carlo path gets its own ChaCha generator keyed by the master
//! seed and a path address such as `[experiment, path]` or
//! `[outer, checkpoint, inner]`, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PathRng = ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for the stream at `address` under `master`.
pub fn stream_rng(master: u64, address: &[u64]) -> PathRng {
    let mut state = master;
    let mut key = splitmix64(&mut state);
    for &a in address {
        state ^= a.wrapping_mul(0xD6E8_FEB8_6659_FD93).wrapping_add(key);
        key = splitmix64(&mut state);
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
