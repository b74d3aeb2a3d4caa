//! Independent random streams derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep streams for different consumers apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    PolicyInit = 1,
    PredictorInit = 2,
    Sampling = 3,
    Update = 4,
    Episodes = 5,
    MetaReset = 6,
    Bonus = 7,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream, path: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ splitmix(stream as u64));
    for &p in path {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x5851_f42d_4c95_7f2d)));
    }
    h
}

pub fn rng(seed: u64, stream: Stream, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, path))
}
