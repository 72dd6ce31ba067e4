//! Seeded random streams.
//!
//! Every random draw in the toolkit comes from a ChaCha8 generator derived
//! from one user seed. Sub-streams are keyed by a name ("init", "mask",
//! "shuffle", ...) and an optional integer (epoch, sequence id), so two
//! consumers never share or perturb each other's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive the seed of the sub-stream `name` from a root seed.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(name)))
}

/// Generator for `seed` with ChaCha stream number `stream`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for the named sub-stream of `seed`.
pub fn named(seed: u64, name: &str) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name))
}

/// Named sub-stream additionally keyed by an integer (epoch, index, ...).
pub fn named_keyed(seed: u64, name: &str, key: u64) -> Rng {
    stream(derive_seed(seed, name), key)
}

/// Normal(0, std) truncated to two standard deviations by rejection.
pub fn truncated_normal(rng: &mut Rng, std: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let z: f64 = normal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}
