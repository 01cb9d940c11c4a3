//! Seed substreams.
//!
//! Every replicate draws from its own ChaCha stream whose seed is a hash of the
//! master seed and a path of integer keys (cell index, replicate index, ...).
//! Results therefore do not depend on the order in which replicates execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Hashes a master seed and a key path into a single 64-bit seed.
pub fn derive_seed(master: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn substream(master: u64, keys: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, keys))
}

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Stable 64-bit key for a string label (FNV-1a), used to separate streams by name.
pub fn label_key(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let a: u64 = substream(7, &[1, 2]).random();
        let b: u64 = substream(7, &[1, 2]).random();
        let c: u64 = substream(7, &[2, 1]).random();
        let d: u64 = substream(8, &[1, 2]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
