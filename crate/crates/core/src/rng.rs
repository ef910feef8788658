//! Seeded random streams.
//!
//! A drop is identified by a `u64` seed. Every consumer of randomness draws
//! from its own named substream of that seed, so two schemes evaluated on the
//! same drop see identical placements and shadowing regardless of how much
//! randomness the other stages consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Substream {
    Placement = 1,
    Shadowing = 2,
    PilotNoise = 3,
    Symbols = 4,
    Exploration = 5,
    Synthetic = 8,
}

/// Independent generator for `(seed, stream)`.
pub fn substream(seed: u64, stream: Substream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Derives the seed of drop `index` from a master seed (SplitMix64 finalizer).
pub fn drop_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
