//! Counter-based random streams.
//!
//! Every oracle draw comes from a ChaCha8 stream keyed by
//! `(seed, agent, iteration)`; the draw index is the position inside that
//! stream. Results therefore do not depend on the order in which agents or
//! runs are scheduled, and two algorithms that sample the same agent at the
//! same iteration see the same noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ORACLE_DOMAIN: u64 = 0x6f72_6163_6c65_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh stream for `agent`'s draws at `iteration`.
    pub fn stream(&self, agent: usize, iteration: usize) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&(agent as u64).to_le_bytes());
        key[16..24].copy_from_slice(&(iteration as u64).to_le_bytes());
        key[24..32].copy_from_slice(&ORACLE_DOMAIN.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}
