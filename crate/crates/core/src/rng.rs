//! Deterministic derivation of independent random streams.
//!
//! Every stream is a ChaCha8 generator seeded from a master seed and a path of
//! integers (domain tag, trial, scale, lane, ...). Streams never share state, so
//! replacing one scale's stream leaves every other draw bit-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Domain tags keep stream families disjoint.
pub mod domain {
    pub const SCALE: u64 = 0x5C41_1E00;
    pub const CANDIDATE: u64 = 0xCA4D_1DA7;
    pub const SELECT: u64 = 0x5E1E_C700;
    pub const PICK: u64 = 0x91C4_0000;
    pub const TRIAL: u64 = 0x7121_A100;
    pub const CODEBOOK: u64 = 0xC0DE_B00C;
    pub const MODES: u64 = 0x30DE_5000;
    pub const REFERENCE: u64 = 0x4EF0_0000;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `master` with `path` into a 64-bit seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(master: u64, path: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}
