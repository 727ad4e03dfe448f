//! Counter-based randomness for fire masks.
//!
//! Every mask is a pure function of `(seed, epoch, case, step)`: the four
//! words form the 256-bit ChaCha key and the cell index is the position in
//! the keystream. Nothing has to be stored to replay a rollout, which is
//! what lets the backward pass regenerate masks during recomputation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Key identifying one update step of one case in one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngKey {
    pub seed: u64,
    pub epoch: u64,
    pub case: u64,
    pub step: u64,
}

impl RngKey {
    pub const fn new(seed: u64, epoch: u64, case: u64, step: u64) -> Self {
        Self {
            seed,
            epoch,
            case,
            step,
        }
    }

    /// Same run coordinates, different step.
    pub const fn at_step(self, step: u64) -> Self {
        Self { step, ..self }
    }

    /// Keystream generator for this key. Draw `i` belongs to cell `i`.
    pub fn stream(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.epoch.to_le_bytes());
        key[16..24].copy_from_slice(&self.case.to_le_bytes());
        key[24..32].copy_from_slice(&self.step.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

/// Bernoulli bits, one per keystream position.
pub fn bernoulli_bits(key: RngKey, count: usize, p: f64) -> Vec<u8> {
    if p >= 1.0 {
        return vec![1; count];
    }
    if p <= 0.0 {
        return vec![0; count];
    }
    let mut stream = key.stream();
    (0..count)
        .map(|_| u8::from(stream.random::<f64>() < p))
        .collect()
}
