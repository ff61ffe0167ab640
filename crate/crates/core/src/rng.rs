//! Counter-keyed Gaussian noise.
//!
//! Each draw is addressed by `(seed, chain, step)`: the chain key is a
//! SplitMix64 hash of the seed and chain index, and every step gets its own
//! window of the ChaCha keystream. No generator state is shared between
//! chains or steps, so chains can run in any order or in parallel.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// 32-bit words reserved in the keystream for each step.
const WORDS_PER_STEP: u128 = 1 << 40;

/// Step index used for the initial state `x_T`.
pub const INIT_STEP: u64 = 0;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the per-chain key from the run seed.
pub fn chain_seed(seed: u64, chain: u64) -> u64 {
    splitmix64(seed ^ splitmix64(chain.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// Noise source for one chain.
#[derive(Debug, Clone, Copy)]
pub struct NoiseStream {
    key: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, chain: u64) -> Self {
        Self {
            key: chain_seed(seed, chain),
        }
    }

    /// Rebuilds a stream from a key previously returned by [`NoiseStream::key`].
    pub fn from_key(key: u64) -> Self {
        Self { key }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// `n` standard normal draws for the given step.
    pub fn normals(&self, step: u64, n: usize) -> DVector<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(self.key);
        rng.set_word_pos(u128::from(step) * WORDS_PER_STEP);
        DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)))
    }
}
