//! Seeded random streams.
//!
//! Parallelizable work (one tree, one patient) draws from its own stream
//! derived from `(seed, index)`, so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a stream index and a domain tag.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(domain)) ^ index)
}

pub fn stream(seed: u64, domain: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, domain, index))
}

/// Domain tags keep streams for different purposes independent.
pub mod domain {
    pub const PATIENT: u64 = 1;
    pub const COHORT: u64 = 2;
    pub const TREE: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const EMBEDDING: u64 = 5;
    pub const CONFORMAL: u64 = 6;
}
