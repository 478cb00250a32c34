//! Seeded, splittable random streams.
//!
//! Every randomized routine in the crate draws from a [`RandomStream`]. A
//! stream is fully determined by its seed, and [`RandomStream::split`]
//! derives child streams from an index so that independent pieces of work
//! (rounds, repeats, query pairs) never share generator state.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    inner: Xoshiro256PlusPlus,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// The seed this stream was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream for `index`. Depends only on this stream's seed and the
    /// index, never on how much of this stream has been consumed.
    pub fn split(&self, index: u64) -> RandomStream {
        RandomStream::new(derive_seed(self.seed, index))
    }

    /// Child stream addressed by a path of indices, e.g. `[pair, step, repeat]`.
    pub fn split_path(&self, path: &[u64]) -> RandomStream {
        let seed = path.iter().fold(self.seed, |acc, &i| derive_seed(acc, i));
        RandomStream::new(seed)
    }

    /// Draws a fresh seed from the stream, consuming state.
    pub fn next_seed(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut mixer =
        SplitMix64::seed_from_u64(seed ^ index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
    mixer.next_u64()
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

/// Fast per-round generator seeded from a parent stream.
pub(crate) type RoundRng = Xoshiro256PlusPlus;

pub(crate) fn round_rng(parent: &mut RandomStream) -> RoundRng {
    Xoshiro256PlusPlus::seed_from_u64(parent.next_seed())
}
