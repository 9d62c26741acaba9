//! Stable child-seed derivation.
//!
//! Every random stream in an experiment is seeded from
//! `(master seed, purpose tag, index path)`, so a cell or replicate can be
//! recomputed in isolation and serial and parallel runs agree bitwise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for every random stream in the crate.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed, a purpose tag and an index path.
pub fn derive_seed(master: u64, tag: &str, path: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    // FNV-1a over the tag, folded into the state
    let mut t: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        t ^= u64::from(b);
        t = t.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h = splitmix64(h ^ t);
    for &i in path {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn child_rng(master: u64, tag: &str, path: &[u64]) -> Rng {
    rng_from(derive_seed(master, tag, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_separates_inputs() {
        let a = derive_seed(7, "train", &[0]);
        assert_eq!(a, derive_seed(7, "train", &[0]));
        assert_ne!(a, derive_seed(7, "train", &[1]));
        assert_ne!(a, derive_seed(7, "eval", &[0]));
        assert_ne!(a, derive_seed(8, "train", &[0]));
        assert_ne!(derive_seed(1, "x", &[0, 1]), derive_seed(1, "x", &[1, 0]));
    }
}
