//! Counter-based random streams.
//!
//! Every random quantity in the crate is drawn from a stream addressed by
//! `(master seed, purpose tag, index)`. The ChaCha key is derived from the
//! seed and tag, and the index selects the ChaCha stream, so path `n` is the
//! same no matter which worker draws it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Purpose tags keep unrelated consumers of the same seed apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    /// Driving noise for sample paths of X.
    Paths,
    /// Bernoulli draws used for randomized passage times.
    Randomization,
    /// Independent (non-coupled) batches; the payload distinguishes batches.
    Batch(u32),
    /// Stand-alone mark sampling (distribution checks).
    Marks,
    /// Separate batch for quantities that are plugged into other estimators.
    Anchor,
}

impl Purpose {
    fn code(self) -> u64 {
        match self {
            Purpose::Paths => 0x5041_5448,
            Purpose::Randomization => 0x5241_4e44,
            Purpose::Marks => 0x4d41_524b,
            Purpose::Anchor => 0x414e_4348,
            Purpose::Batch(i) => 0x4241_0000_0000_0000 | u64::from(i),
        }
    }
}

/// Address of one deterministic random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub purpose: Purpose,
    pub index: u64,
}

impl RngStream {
    pub fn new(seed: u64, purpose: Purpose, index: u64) -> Self {
        Self { seed, purpose, index }
    }

    /// Same seed and purpose, different index.
    pub fn at(self, index: u64) -> Self {
        Self { index, ..self }
    }

    pub fn with_purpose(self, purpose: Purpose) -> Self {
        Self { purpose, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.seed ^ self.purpose.code().rotate_left(29);
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.index);
        rng
    }
}

impl fmt::Display for RngStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seed={}/{:?}/{}", self.seed, self.purpose, self.index)
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
