//! Seeded random streams.
//!
//! Every stochastic component draws from a `ChaCha8Rng`. A run's master seed
//! expands into named sub-streams so that, for example, the environment noise
//! can be held fixed while the network initialization varies. Per-particle
//! draws use indexed ChaCha streams so results do not depend on iteration
//! order.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the named sub-stream `name` under `master`.
pub fn substream_seed(master: u64, name: &str) -> u64 {
    // FNV-1a over the name, mixed with the master seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(master ^ splitmix64(h))
}

pub fn substream(master: u64, name: &str) -> Rng {
    seeded(substream_seed(master, name))
}

/// Stream `index` of the generator keyed by `op_seed`.
pub fn indexed(op_seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(op_seed);
    rng.set_stream(index);
    rng
}

/// Draws a fresh operation seed from `rng`.
pub fn op_seed(rng: &mut Rng) -> u64 {
    rng.random()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_are_distinct_and_stable() {
        let a: u64 = substream(7, "env").random();
        let b: u64 = substream(7, "filter").random();
        let c: u64 = substream(7, "env").random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn indexed_streams_differ() {
        let a: u64 = indexed(1, 0).random();
        let b: u64 = indexed(1, 1).random();
        assert_ne!(a, b);
    }
}
