//! Seeded, splittable random streams.
//!
//! Every session derives one independent ChaCha8 stream per role from a
//! master seed, so adding an eavesdropper never shifts the draws made by
//! the honest parties or the channel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Alice,
    Bob,
    Channel,
    Eve,
    /// Public coin: permutations, samples and hash seeds announced in the clear.
    Public,
    Center,
    BobChannel,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Alice => 1,
            Stream::Bob => 2,
            Stream::Channel => 3,
            Stream::Eve => 4,
            Stream::Public => 5,
            Stream::Center => 6,
            Stream::BobChannel => 7,
        }
    }
}

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

    pub fn stream(&self, stream: Stream) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(stream.id());
        rng
    }

    /// Seed tree for a labelled sub-experiment (splitmix64 of master ⊕ label).
    pub fn child(&self, label: u64) -> SeedTree {
        let mut z = self.master ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        SeedTree { master: z ^ (z >> 31) }
    }
}
