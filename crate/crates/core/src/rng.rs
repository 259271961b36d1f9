//! Keyed, counter-based random streams.
//!
//! Every tensor draws from ChaCha8 keyed by SHA-256 of `(seed, owner, name)`.
//! Buffers are split into fixed chunks and chunk `k` uses ChaCha stream `k`,
//! so the values do not depend on generation order or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

const CHUNK: usize = 1 << 16;

pub fn stream_key(seed: u64, owner: &str, name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((owner.len() as u64).to_le_bytes());
    h.update(owner.as_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    h.finalize().into()
}

/// Fills `out` with uniform draws from `[lo, hi)`.
pub fn fill_uniform(out: &mut [f32], key: [u8; 32], lo: f32, hi: f32) {
    out.par_chunks_mut(CHUNK).enumerate().for_each(|(k, chunk)| {
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(k as u64);
        for v in chunk.iter_mut() {
            let mut x = rng.random_range(lo..hi);
            // f32 rounding of lo + u*(hi-lo) can land on hi.
            if x >= hi {
                x = lo;
            }
            *v = x;
        }
    });
}

/// Sub-seed for a named consumer of a run seed.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let key = stream_key(seed, "derive", name);
    u64::from_le_bytes(key[..8].try_into().expect("8 bytes"))
}
