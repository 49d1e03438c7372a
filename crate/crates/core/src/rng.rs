//! Seeded randomness.
//!
//! Every experiment owns one root seed. Independent streams (adversary,
//! learner, oracle, ...) and per-round children are derived from it with the
//! SplitMix64 finalizer, and each derived seed initializes a
//! `Xoshiro256PlusPlus` generator. Both algorithms are fully specified
//! (Steele et al. 2014; Blackman & Vigna 2019), so a trajectory can be
//! replayed bit-for-bit from `(seed, stream, round)`.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type ExperimentRng = Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a path of labels into a child seed.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &label| {
        splitmix64(acc ^ splitmix64(label))
    })
}

/// Named top-level streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Adversary = 1,
    Learner = 2,
    Oracle = 3,
    Bandit = 4,
    Coupling = 5,
    Setup = 6,
}

#[derive(Clone, Copy, Debug)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn stream(&self, stream: Stream) -> ExperimentRng {
        ExperimentRng::seed_from_u64(derive_seed(self.root, &[stream as u64]))
    }

    /// Generator for one round of one stream.
    pub fn round(&self, stream: Stream, t: u64) -> ExperimentRng {
        ExperimentRng::seed_from_u64(derive_seed(self.root, &[stream as u64, t]))
    }

    pub fn child(&self, label: u64) -> SeedTree {
        SeedTree::new(derive_seed(self.root, &[label]))
    }
}

pub fn rng_from_seed(seed: u64) -> ExperimentRng {
    ExperimentRng::seed_from_u64(seed)
}
