//! Counter-based seed derivation.
//!
//! Every Poisson stream, replica, and augmentation layer gets its own
//! `ChaCha8Rng` seeded from (root seed, tag path). Streams derived from
//! distinct tag paths are independent for practical purposes and, crucially,
//! stable: the stream at a given location does not change when other
//! locations are added, which is what makes `augment` leave existing arrows
//! bit-identical.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

// splitmix64, the standard 64-bit finalizer chain.
#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives sub-seeds from one root seed and a path of integer tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSplitter {
    root: u64,
}

pub mod tag {
    pub const JUMP: u64 = 1;
    pub const BRANCH: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const REPLICA: u64 = 4;
    pub const LEFT: u64 = 5;
    pub const RIGHT: u64 = 6;
    pub const ATTEMPT: u64 = 7;
    pub const OP_EDGE: u64 = 8;
}

impl SeedSplitter {
    #[must_use]
    pub fn new(root: u64) -> Self {
        SeedSplitter { root }
    }

    /// Sub-seed for a tag path. Mixing is a splitmix64 chain; each step
    /// absorbs one tag, so (a, b) and (b, a) produce unrelated values.
    #[must_use]
    pub fn derive(&self, tags: &[u64]) -> u64 {
        let mut state = splitmix64(self.root ^ 0x5bf0_3635_d1a0_52a1);
        for &t in tags {
            state = splitmix64(state ^ t.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        }
        state
    }

    #[must_use]
    pub fn rng(&self, tags: &[u64]) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive(tags))
    }

    /// Splitter rooted at a derived seed, for nested fan-out.
    #[must_use]
    pub fn child(&self, tags: &[u64]) -> SeedSplitter {
        SeedSplitter::new(self.derive(tags))
    }
}
