//! Seed derivation: every random stream in a run is a pure function of one
//! master seed plus a purpose salt, so member counts or call order in one
//! subsystem never reshuffle another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for cheap seed mixing.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, salt: u64) -> u64 {
    mix(master ^ mix(salt))
}

pub fn derive_rng(master: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, salt))
}

/// Salt namespaces for the simulator's independent streams.
pub mod salt {
    pub const POPULATION: u64 = 0x01;
    pub const SEEDING: u64 = 0x02;
    pub const TRANSMISSION: u64 = 0x03;
    pub const POLICY: u64 = 0x04;
    pub const ENSEMBLE: u64 = 0x05;
    pub const CALIBRATION: u64 = 0x06;
    pub const INIT: u64 = 0x07;
}
