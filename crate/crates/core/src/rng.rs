//! Counter-based random streams.
//!
//! A stream is identified by `(master_seed, domain, index)`. The key is
//! expanded into a ChaCha8 key with SplitMix64 and `index` selects the ChaCha
//! stream, so every work unit owns an independent sequence that does not
//! depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains, kept distinct so experiments never share draws by accident.
pub mod domain {
    pub const PATH: u64 = 0x01;
    pub const VALIDATION: u64 = 0x02;
    pub const INVARIANT: u64 = 0x03;
    pub const MIXING: u64 = 0x04;
    pub const TANGENT: u64 = 0x05;
    pub const DIRECTIONS: u64 = 0x06;
    pub const KOLMOGOROV: u64 = 0x07;
    pub const GAP: u64 = 0x08;
    pub const PROBES: u64 = 0x09;
    pub const INVARIANCE: u64 = 0x0A;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic RNG for work unit `index` of `domain` under `master_seed`.
pub fn stream(master_seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut state = master_seed ^ domain.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
