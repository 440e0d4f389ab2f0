//! Counter-based random streams.
//!
//! Every stream is keyed by `(seed, index, role)`, so a replicate's data or
//! bootstrap weights never depend on which other replicates ran, or in what
//! order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream roles used across the crate.
pub mod role {
    pub const COVARIATES: u64 = 1;
    pub const TREATMENT: u64 = 2;
    pub const DOSE: u64 = 3;
    pub const OUTCOME_PRE: u64 = 4;
    pub const OUTCOME_POST: u64 = 5;
    pub const BOOTSTRAP: u64 = 6;
    pub const SUPER_POPULATION: u64 = 7;
    pub const PANEL: u64 = 8;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, index, role)`.
pub fn stream(seed: u64, index: u64, role: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    let mut state = splitmix64(seed);
    for (k, part) in [index, role, 0x6469_6463_7572_7665].into_iter().enumerate() {
        state = splitmix64(
            state
                ^ part
                    .wrapping_mul(0xD6E8_FEB8_6659_FD93)
                    .wrapping_add(k as u64),
        );
        key[k * 8..(k + 1) * 8].copy_from_slice(&state.to_le_bytes());
    }
    state = splitmix64(state);
    key[24..32].copy_from_slice(&state.to_le_bytes());
    ChaCha12Rng::from_seed(key)
}
