//! Seeded, splittable randomness.
//!
//! Every random draw in the crate comes from a [`SeedTree`]: a root seed from
//! which independent ChaCha8 streams are derived by `(domain, index)`. ChaCha
//! is counter based, so a stream is fully determined by its key and stream id
//! and never depends on how many draws other streams have made. Generating
//! instance `i` of a synthetic pool therefore gives the same values whether
//! the pool is produced sequentially or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent purposes that draw randomness. Each gets a disjoint stream range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Domain {
    SynthInstance = 1,
    SynthShared = 2,
    LabelShuffle = 3,
    RandomBaseline = 4,
    KMeans = 5,
    JlBlock = 6,
    Test = 7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream for `index` within `domain`. Indices must fit in 32 bits.
    pub fn stream(&self, domain: Domain, index: u64) -> ChaCha8Rng {
        debug_assert!(index <= u32::MAX as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((domain as u64) << 32) | (index & 0xffff_ffff));
        rng
    }
}
