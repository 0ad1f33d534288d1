//! Counter-based random streams.
//!
//! A [`SeedStream`] is a 64-bit key. Children are derived by mixing the
//! parent key with an index, so the stream for `(seed, episode 17, class 1,
//! point 4)` is the same no matter which thread asks for it or in which
//! order. Generators are ChaCha8 seeded from the key.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    key: u64,
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix(seed.wrapping_add(0x9e37_79b9_7f4a_7c15)),
        }
    }

    pub fn child(&self, index: u64) -> Self {
        Self {
            key: mix(self.key ^ mix(index.wrapping_add(0x632b_e59b_d9b4_e019))),
        }
    }

    /// Child keyed by a domain tag, for separating unrelated uses of one seed.
    pub fn named(&self, tag: &str) -> Self {
        let h = tag
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
        self.child(h)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }

    pub fn key(&self) -> u64 {
        self.key
    }
}
