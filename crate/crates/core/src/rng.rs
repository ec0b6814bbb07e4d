//! Seeded, counter-based random streams.
//!
//! Every consumer derives a generator from `(seed, domain)` and selects an
//! independent stream by index, so results do not depend on thread
//! scheduling or on how many draws another series consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Generator for stream `stream` within `domain` of `seed`.
pub fn stream_rng(seed: u64, domain: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(domain)));
    rng.set_stream(stream);
    rng
}
