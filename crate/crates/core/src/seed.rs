//! Keyed derivation of independent random streams from one master seed.
//!
//! Every consumer of randomness asks for a stream by `(purpose, index)`.
//! The stream seed is a SHA-256 digest of the master seed and the key, so
//! adding a new purpose never perturbs the streams that already exist.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// The RNG type used throughout the simulator.
pub type SimRng = ChaCha12Rng;

pub mod purpose {
    pub const TOPOLOGY: &str = "topology";
    pub const MOBILITY: &str = "mobility";
    pub const SHADOWING: &str = "shadowing";
    pub const FADING: &str = "fading";
    pub const EXPLORATION: &str = "exploration";
    pub const INIT: &str = "init";
    pub const REPLAY: &str = "replay";
    pub const CALIBRATION: &str = "calibration";
    pub const EVAL_MOBILITY: &str = "eval-mobility";
    pub const EVAL_SHADOWING: &str = "eval-shadowing";
    pub const EVAL_FADING: &str = "eval-fading";
    pub const EVAL_POLICY: &str = "eval-policy";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedHierarchy {
    master: u64,
}

impl SeedHierarchy {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn seed_bytes(&self, purpose: &str, index: u64) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(b"v2x-marl/stream/v1");
        hasher.update(self.master.to_le_bytes());
        hasher.update((purpose.len() as u64).to_le_bytes());
        hasher.update(purpose.as_bytes());
        hasher.update(index.to_le_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        seed
    }

    pub fn stream(&self, purpose: &str, index: u64) -> SimRng {
        SimRng::from_seed(self.seed_bytes(purpose, index))
    }
}
