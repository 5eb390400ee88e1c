//! Named random sub-streams derived from one master seed.
//!
//! Each consumer of randomness asks for its own stream by name, so adding or
//! removing draws in one consumer never shifts the numbers another sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const DATA: &str = "data";
pub const INIT: &str = "init";
pub const TRAIN_BATCHES: &str = "train_batches";
pub const VALIDATION_BATCHES: &str = "validation_batches";
pub const LINE_SEARCH: &str = "line_search";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStreams {
    master: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Stable 64-bit seed for the stream called `name`.
    pub fn seed(&self, name: &str) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(self.master.to_le_bytes());
        hasher.update(name.as_bytes());
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
    }

    pub fn rng(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed(name))
    }
}
