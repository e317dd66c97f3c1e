//! Named, reproducible random streams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed of a named sub-stream. Distinct names give unrelated
/// streams; the same (root, name) pair always gives the same seed.
pub fn derive_seed(root: u64, name: &str) -> u64 {
    // FNV-1a over the name, then mixed with the root.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(root ^ splitmix64(h))
}

pub fn stream(root: u64, name: &str) -> SimRng {
    SimRng::seed_from_u64(derive_seed(root, name))
}

/// Sub-stream indexed by integers, e.g. (episode, try).
pub fn indexed_stream(root: u64, name: &str, indices: &[u64]) -> SimRng {
    let mut seed = derive_seed(root, name);
    for &i in indices {
        seed = splitmix64(seed ^ splitmix64(i.wrapping_add(1)));
    }
    SimRng::seed_from_u64(seed)
}
