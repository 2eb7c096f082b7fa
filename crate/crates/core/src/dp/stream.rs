//! Deterministic per-(seed, round, collaborator) random streams.
//!
//! Stream keys are SHA-256 digests over a domain tag and the length-prefixed
//! fields, so distinct inputs never share an encoding. The digest seeds a
//! ChaCha20 generator.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub const NOISE_DOMAIN: &str = "dp-noise";
pub const COHORT_DOMAIN: &str = "cohort";

#[derive(Clone, Debug)]
pub struct RngStream {
    id: String,
    rng: ChaCha20Rng,
}

impl RngStream {
    /// Short hex identifier of the stream key, recorded in round logs.
    pub fn id(&self) -> &str {
        &self.id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub fn derive_stream(domain: &str, seed: u64, round: u32, label: &str) -> RngStream {
    let mut h = Sha256::new();
    h.update(b"fedsim/stream/v1\0");
    h.update((domain.len() as u64).to_le_bytes());
    h.update(domain.as_bytes());
    h.update(seed.to_le_bytes());
    h.update(round.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    let key: [u8; 32] = h.finalize().into();
    RngStream {
        id: hex::encode(&key[..8]),
        rng: ChaCha20Rng::from_seed(key),
    }
}

/// Noise stream for one collaborator in one round.
pub fn rng_stream_for(round: u32, collaborator_id: &str, seed: u64) -> RngStream {
    derive_stream(NOISE_DOMAIN, seed, round, collaborator_id)
}
