//! Named, splittable random streams.
//!
//! Every consumer (initialization, generator noise, dataset shuffling, penalty
//! interpolation, ...) draws from its own ChaCha stream keyed by the run seed and
//! the consumer's name, so adding a new consumer never shifts the numbers seen by
//! an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for the named consumer.
    pub fn stream(&self, name: &str) -> StreamRng {
        let mut rng = ChaCha20Rng::seed_from_u64(splitmix(self.seed));
        rng.set_stream(fnv1a(name.as_bytes()));
        rng
    }

    /// Child family of streams, e.g. one per network or per epoch.
    pub fn split(&self, name: &str) -> Streams {
        Streams {
            seed: splitmix(self.seed ^ fnv1a(name.as_bytes())),
        }
    }

    pub fn split_index(&self, name: &str, index: u64) -> Streams {
        Streams {
            seed: splitmix(splitmix(self.seed ^ fnv1a(name.as_bytes())) ^ index),
        }
    }
}

pub fn standard_normal_vec(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
