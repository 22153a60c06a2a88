//! Stable seed derivation. Every simulated draw is keyed by a seed mixed
//! with its coordinates, so results never depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::features::fnv1a64;

/// Builds a 64-bit key from a base seed and a sequence of labelled parts.
#[derive(Debug, Clone)]
pub struct SeedKey(Vec<u8>);

impl SeedKey {
    pub fn new(seed: u64) -> Self {
        Self(seed.to_le_bytes().to_vec())
    }

    pub fn str(mut self, s: &str) -> Self {
        self.0.extend_from_slice(&(s.len() as u64).to_le_bytes());
        self.0.extend_from_slice(s.as_bytes());
        self
    }

    pub fn int(mut self, v: u64) -> Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn finish(&self) -> u64 {
        splitmix64(fnv1a64(&self.0))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.finish())
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
