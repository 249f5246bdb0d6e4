//! Counter-based random streams.
//!
//! Every random decision is addressed by `(seed, stream, word position)`, so a
//! draw never depends on which worker thread produced it or in what order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep independent consumers on disjoint streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Prior = 1,
    Trajectory = 2,
    Perturb = 3,
    Forward = 4,
    Eval = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of identifiers into one 64-bit stream id.
pub fn stream_id(ids: &[u64]) -> u64 {
    ids.iter()
        .fold(0x005E_ED0F_D1FF_u64, |acc, &id| splitmix64(acc ^ splitmix64(id)))
}

/// Address of one random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub stream: u64,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose, ids: &[u64]) -> Self {
        let mut all = Vec::with_capacity(ids.len() + 1);
        all.push(purpose as u64);
        all.extend_from_slice(ids);
        Self {
            seed,
            stream: stream_id(&all),
        }
    }

    /// Generator positioned at the start of the stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Generator positioned at block `index`, where each block holds
    /// `block_len` uniform draws. Step `k` of a trajectory over `D` positions
    /// uses block `k` with `block_len = D`, so position `i` always reads the
    /// same draw no matter how the step is computed.
    pub fn rng_at(&self, index: u64, block_len: usize) -> ChaCha8Rng {
        let mut rng = self.rng();
        // one f64 consumes two 32-bit words
        rng.set_word_pos(u128::from(index) * block_len as u128 * 2);
        rng
    }

    pub fn uniforms_at(&self, index: u64, count: usize) -> Vec<f64> {
        let mut rng = self.rng_at(index, count);
        (0..count).map(|_| rng.random::<f64>()).collect()
    }
}

/// Inverse-CDF draw from a normalized categorical row.
pub fn categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = j;
            acc += p;
            if u < acc {
                return j;
            }
        }
    }
    last_positive
}
