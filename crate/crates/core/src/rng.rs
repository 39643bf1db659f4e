//! Keyed RNG substreams.
//!
//! A master seed derives an independent ChaCha8 stream for every
//! `(purpose, round, client)` key, so changing the number of active clients
//! or the order in which clients run never perturbs an unrelated stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a stream is used for. Part of the derivation key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Synthesis,
    Partition,
    Init,
    ClientSelection,
    LocalSgd,
    VarianceEstimate,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Synthesis => 0x5359_4e54,
            Purpose::Partition => 0x5041_5254,
            Purpose::Init => 0x494e_4954,
            Purpose::ClientSelection => 0x5345_4c45,
            Purpose::LocalSgd => 0x4c53_4744,
            Purpose::VarianceEstimate => 0x5641_5249,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives substreams from a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn derive_seed(&self, purpose: Purpose, round: u64, client: u64) -> u64 {
        let mut h = splitmix64(self.master);
        h = splitmix64(h ^ purpose.tag());
        h = splitmix64(h ^ round);
        splitmix64(h ^ client.rotate_left(32))
    }

    pub fn stream(&self, purpose: Purpose, round: u64, client: u64) -> Stream {
        ChaCha8Rng::seed_from_u64(self.derive_seed(purpose, round, client))
    }
}
