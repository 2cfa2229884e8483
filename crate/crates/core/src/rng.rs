//! Seeded random streams.
//!
//! Every stochastic step draws from a ChaCha20 stream keyed by a 64-bit seed
//! and a stream number, so independent steps of one experiment cell never
//! share state. Gaussian variates come from `rand_distr::StandardNormal`
//! (ziggurat).

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type SeededRng = ChaCha20Rng;

/// Stream numbers used inside one experiment cell.
pub mod stream {
    pub const DECOMPOSE: u64 = 0;
    /// Attack streams are `ATTACK_BASE + k`.
    pub const ATTACK_BASE: u64 = 100;
    pub const GAME: u64 = 1000;
}

pub fn seeded_rng(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
