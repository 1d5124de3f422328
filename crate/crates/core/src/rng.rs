//! Counter-style random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream addressed by a
//! run seed plus a short key (sample index, vector index, tensor name hash...).
//! Results therefore depend only on *what* is drawn, never on the order in
//! which worker threads happen to ask for it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `seed` at position `key`. Distinct keys give independent streams.
pub fn stream(seed: u64, key: &[u64]) -> Stream {
    let mut id = 0x5EED_0000_0000_0001u64;
    for &k in key {
        id = splitmix64(id ^ k);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Stable 64-bit FNV-1a hash, used to turn names into stream keys.
pub fn name_key(name: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn normal_vec(rng: &mut Stream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn uniform_vec(rng: &mut Stream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}
