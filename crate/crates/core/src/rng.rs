//! Counter-based random streams.
//!
//! Every random draw in the crate is addressed by `(seed, stream path, counter, lane)`:
//! the stream path is derived by hashing child ids into the key, the counter selects the
//! ChaCha stream (typically the time step) and the lane selects a disjoint block of the
//! keystream (typically the particle index). Draws therefore never depend on the order in
//! which particles, trials or grid cells are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Words of keystream reserved per lane.
const LANE_WORDS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    seed: u64,
    path: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey { seed, path: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent sub-key.
    pub fn child(&self, id: u64) -> Self {
        StreamKey {
            seed: self.seed,
            path: splitmix64(self.path ^ splitmix64(id.wrapping_add(0x632B_E59B_D9B4_E019))),
        }
    }

    /// Generator positioned at `(counter, lane)` of this key.
    pub fn rng(&self, counter: u64, lane: u64) -> ChaCha8Rng {
        let mut bytes = [0u8; 32];
        let mut s = self.seed ^ self.path.rotate_left(17);
        for chunk in bytes.chunks_exact_mut(8) {
            s = splitmix64(s ^ self.path);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(bytes);
        rng.set_stream(counter);
        rng.set_word_pos(u128::from(lane) << LANE_WORDS);
        rng
    }
}
