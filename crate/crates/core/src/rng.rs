//! Seeded randomness shared by every stochastic step.
//!
//! All sampling goes through [`StimulusRng`], a ChaCha8 stream keyed by
//! `SHA-256("asr-rng/v1" || seed_le)`. Bounded integers use rejection
//! sampling on raw `u64` draws and shuffles are plain Fisher-Yates, so the
//! stream of decisions depends only on the seed and this file, not on the
//! sampling helpers of any particular `rand` release.
//!
//! Per-cycle seeds are derived from the master seed with
//! [`derive_seed`]: the first eight bytes (little endian) of
//! `SHA-256(label || 0x00 || master_le || index_le...)`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const RNG_VERSION: &str = "chacha8/sha256-key/v1";

#[derive(Debug, Clone)]
pub struct StimulusRng {
    inner: ChaCha8Rng,
}

impl StimulusRng {
    pub fn from_seed(seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"asr-rng/v1");
        hasher.update(seed.to_le_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        StimulusRng {
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..bound`.
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "below(0)");
        let n = bound as u64;
        // largest multiple of n minus one; draws above it are rejected
        let limit = u64::MAX - (u64::MAX % n + 1) % n;
        loop {
            let x = self.next_u64();
            if x <= limit {
                return (x % n) as usize;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Draws `count` distinct elements in draw order (partial Fisher-Yates
    /// over a copy of the pool).
    pub fn sample<T: Clone>(&mut self, pool: &[T], count: usize) -> Option<Vec<T>> {
        if count > pool.len() {
            return None;
        }
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let j = i + self.below(idx.len() - i);
            idx.swap(i, j);
            out.push(pool[idx[i]].clone());
        }
        Some(out)
    }
}

pub fn derive_seed(label: &str, master: u64, indices: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(label.as_bytes());
    hasher.update([0u8]);
    hasher.update(master.to_le_bytes());
    for i in indices {
        hasher.update(i.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}
