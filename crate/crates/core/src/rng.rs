//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by the
//! run seed plus a short path of integers (stream tag, iteration, scenario
//! index, ...). Results therefore never depend on how work is scheduled
//! across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream tags used across the crate.
pub mod tag {
    pub const THETA_INIT: u64 = 1;
    pub const ITERATE_PICK: u64 = 2;
    pub const BATCH: u64 = 3;
    pub const ROLLOUT: u64 = 4;
    pub const EPSILON_BALL: u64 = 5;
    pub const AUDIT: u64 = 6;
    pub const PREFS: u64 = 7;
    pub const POPULATION_PLAY: u64 = 8;
    pub const RESTART: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent stream from `seed` and a path of counters.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let mut key = [0u8; 32];
    let mut h = splitmix64(seed);
    for (k, &p) in path.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(k as u64 + 1)));
    }
    let mut lane = h;
    for chunk in key.chunks_mut(8) {
        lane = splitmix64(lane);
        chunk.copy_from_slice(&lane.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
