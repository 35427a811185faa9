//! Deterministic seed derivation.
//!
//! Every stochastic unit of work (a replicate, a grid cell, a pairing draw)
//! owns a child seed derived from the master seed and a list of integer tags.
//! Results are therefore independent of execution order and thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step; the standard finalizer used to decorrelate seed streams.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a tag path such as
/// `[study_id, cell_index, rep]`.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &t in tags {
        state = splitmix64(state ^ t);
    }
    state
}

/// The RNG used throughout; small-state, fast, reproducible across platforms.
pub type Rng = ChaCha8Rng;

pub fn rng_from(master: u64, tags: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn child_seeds_differ_across_tags() {
        let a = derive_seed(7, &[0, 0, 1]);
        let b = derive_seed(7, &[0, 0, 2]);
        let c = derive_seed(7, &[0, 1, 1]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
    }

    #[test]
    fn derivation_is_stable() {
        assert_eq!(derive_seed(7, &[1, 2, 3]), derive_seed(7, &[1, 2, 3]));
        assert_ne!(derive_seed(7, &[1, 2, 3]), derive_seed(8, &[1, 2, 3]));
    }

    #[test]
    fn rng_streams_reproduce() {
        use rand::RngCore;
        let mut r1 = rng_from(42, &[5]);
        let mut r2 = rng_from(42, &[5]);
        for _ in 0..16 {
            assert_eq!(r1.next_u64(), r2.next_u64());
        }
    }
}
