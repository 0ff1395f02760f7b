//! Counter-based random streams: one independent generator per key tuple,
//! so draws do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for `(seed, key...)`. Different keys give unrelated streams.
pub fn stream(seed: u64, key: &[u64]) -> Stream {
    let mut h = splitmix64(seed);
    for &k in key {
        h = splitmix64(h ^ splitmix64(k.wrapping_add(0xD1B5_4A32_D192_ED03)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    rng.set_stream(key.len() as u64);
    rng
}

/// Domain tags that keep streams for different purposes apart.
pub mod tag {
    pub const TRUTH_LOAD: u64 = 1;
    pub const FRAME: u64 = 2;
    pub const PSEUDO: u64 = 3;
}
