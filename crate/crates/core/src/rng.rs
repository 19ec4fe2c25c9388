//! Deterministic random streams.
//!
//! Every random quantity in a run is drawn from a ChaCha8 stream keyed by the
//! run seed, a purpose tag, the drop index and a per-item index (trial, cell
//! or calibration slot). Streams never overlap, so results do not depend on
//! evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Geometry = 1,
    Channel = 2,
    PilotNoise = 3,
    Calibration = 4,
    Test = 5,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stream for `(seed, purpose, drop, index)`.
pub fn stream(seed: u64, purpose: Purpose, drop: u64, index: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64((purpose as u64) ^ splitmix64(drop.wrapping_add(0x5851_f42d))));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
