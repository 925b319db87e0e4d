//! Seed derivation for reproducible Monte Carlo.
//!
//! All randomness is drawn from ChaCha20 (`rand_chacha::ChaCha20Rng`), a
//! counter-based stream cipher generator. A stream is identified by a master
//! seed plus a path of labels (module, cell, replicate, ...). The path is
//! folded into a single 64-bit seed with SplitMix64 finalisers, and that seed
//! is expanded to the 256-bit ChaCha key by `SeedableRng::seed_from_u64`.
//! Streams therefore never depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub const STREAM_CHI: u64 = 0x4348_4931;
pub const STREAM_VAR: u64 = 0x5641_5231;
pub const STREAM_CALIBRATION: u64 = 0x4341_4c31;
pub const STREAM_EXPERIMENT: u64 = 0x4558_5031;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `path` into `master`, one SplitMix64 round per label.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

pub fn stream(master: u64, path: &[u64]) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(master, path))
}
