//! Seeded random streams.
//!
//! Every stochastic choice in the crate (parameter init, corpus synthesis,
//! epoch shuffles) draws from a ChaCha stream keyed by the master seed plus
//! a purpose tag, so resuming or re-running never depends on hidden RNG
//! state and any single stream can be reproduced in isolation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the master seed and tag words.
fn mix(master: u64, tags: &[u64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(master);
    for &t in tags {
        eat(t);
    }
    h
}

/// Independent deterministic stream for (master seed, tag path).
pub fn stream(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(master, tags))
}

/// Stable 64-bit content hash (FNV-1a) used for parameter digests and
/// config fingerprints.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
