//! Named, independently seeded random streams.
//!
//! Every stochastic choice in the crate draws from a ChaCha8 stream whose seed
//! is a pure function of `(master seed, stream name, index)`, so results do
//! not depend on evaluation order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a, used to turn stream names into integers.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn derive_seed(master: u64, name: &str, index: u64) -> u64 {
    let a = mix64(master);
    let b = mix64(a ^ fnv1a(name.as_bytes()));
    mix64(b ^ mix64(index))
}

/// Opens the stream `name[index]` under `master`.
pub fn stream(master: u64, name: &str, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, name, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| 0).map(|_| stream(7, "init", 0).random()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let x: u64 = stream(7, "init", 0).random();
        let y: u64 = stream(7, "init", 1).random();
        let z: u64 = stream(7, "shuffle", 0).random();
        let w: u64 = stream(8, "init", 0).random();
        assert_ne!(x, y);
        assert_ne!(x, z);
        assert_ne!(x, w);
    }

    #[test]
    fn seed_derivation_is_pinned() {
        // Frozen so that generated datasets stay bit-identical across releases.
        assert_eq!(mix64(0), 0xe220_a839_7b1d_cdaf);
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
    }
}
