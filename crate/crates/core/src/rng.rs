//! Counter-based random streams.
//!
//! Every draw is addressed by `(root seed, stream id, step)`. The ChaCha key
//! comes from the root seed, the 64-bit ChaCha stream selects the
//! trajectory and purpose, and the block counter is positioned at the step.
//! The values a trajectory sees therefore never depend on which thread ran
//! it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// What a stream is used for. Distinct purposes never share a ChaCha stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Purpose {
    Trajectory = 1,
    Partner = 2,
    InitialState = 3,
    Convolution = 4,
    Synthetic = 5,
    /// Named initial states of a run config.
    NamedState = 6,
    Pilot = 7,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseStream {
    pub root_seed: u64,
    pub stream_id: u64,
}

/// Words reserved per step. Gaussian sampling draws a bounded number of
/// words per value, so a step never overflows into the next.
const STEP_STRIDE_WORDS: u128 = 1 << 32;

impl NoiseStream {
    pub fn new(root_seed: u64, purpose: Purpose, index: u64) -> Self {
        debug_assert!(index < (1 << 56));
        Self { root_seed, stream_id: ((purpose as u64) << 56) | index }
    }

    pub fn trajectory(root_seed: u64, index: u64) -> Self {
        Self::new(root_seed, Purpose::Trajectory, index)
    }

    /// The second, independent stream of a coupling chain.
    pub fn partner(&self) -> Self {
        let index = self.stream_id & ((1 << 56) - 1);
        Self::new(self.root_seed, Purpose::Partner, index)
    }

    /// Generator positioned at the first word of `step`.
    pub fn rng_at(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(expand_seed(self.root_seed));
        rng.set_stream(self.stream_id);
        rng.set_word_pos(step as u128 * STEP_STRIDE_WORDS);
        rng
    }

    /// `n` standard normal draws for `step`.
    pub fn standard_normals(&self, step: u64, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.fill_standard_normals(step, &mut out);
        out
    }

    pub fn fill_standard_normals(&self, step: u64, out: &mut [f64]) {
        let mut rng = self.rng_at(step);
        for x in out.iter_mut() {
            *x = StandardNormal.sample(&mut rng);
        }
    }
}

/// SplitMix64 expansion of a 64-bit seed into a 256-bit ChaCha key.
fn expand_seed(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    key
}
