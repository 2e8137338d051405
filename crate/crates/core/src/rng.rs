//! Splittable deterministic randomness.
//!
//! A [`SeedTree`] is a root seed; every consumer derives its own ChaCha
//! stream from a path of labels, so adding a consumer never perturbs the
//! numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child tree for `label`.
    pub fn split(&self, label: u64) -> SeedTree {
        SeedTree {
            seed: splitmix(self.seed ^ splitmix(label.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }

    /// Child tree keyed by a string label.
    pub fn split_str(&self, label: &str) -> SeedTree {
        let h = label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
        });
        self.split(h)
    }

    pub fn rng(&self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}
