//! Counter-based random substreams.
//!
//! Every random draw in the toolkit comes from a ChaCha8 stream whose key is
//! derived from `(run seed, purpose, iteration, index)`. Results therefore do
//! not depend on evaluation order or on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// What a substream is used for. Distinct purposes never share draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    LangevinNoise = 2,
    Smoothing = 3,
    Subset = 4,
    Projection = 5,
    Momentum = 6,
    Tilting = 7,
    FrozenPotential = 8,
    Dataset = 9,
    Sampling = 10,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A key from which independent child streams are derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey {
    seed: u64,
    purpose: Purpose,
    iteration: u64,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        Self {
            seed,
            purpose,
            iteration: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn purpose(&self) -> Purpose {
        self.purpose
    }

    /// Same seed and purpose, different iteration counter.
    pub fn at_iteration(self, iteration: u64) -> Self {
        Self { iteration, ..self }
    }

    /// The stream for item `index` (a particle, a training point, a grid node).
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut words = [0u8; 32];
        let parts = [
            self.seed,
            self.purpose as u64,
            self.iteration,
            index,
        ];
        let mut acc = 0u64;
        for (chunk, part) in words.chunks_exact_mut(8).zip(parts) {
            acc = splitmix64(acc ^ splitmix64(part));
            chunk.copy_from_slice(&acc.to_le_bytes());
        }
        ChaCha8Rng::from_seed(words)
    }
}

/// Fills `out` with i.i.d. standard normal draws.
pub fn fill_standard_normal<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}
