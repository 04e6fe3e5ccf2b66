//! Seed-derived RNG streams. Every stochastic draw in the crate comes from a
//! stream keyed by `(seed, purpose, indices...)`, so results do not depend on
//! evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream purposes. Distinct tags keep streams for different jobs apart even
/// when the numeric indices collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Taxonomy = 1,
    TrainEpisode = 2,
    Rollout = 3,
    EvalEpisode = 4,
    DataRecord = 5,
    Corruption = 6,
    Init = 7,
}

pub fn derive_seed(seed: u64, purpose: Purpose, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(purpose as u64));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, indices: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, indices))
}
