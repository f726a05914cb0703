//! Keyed seed derivation and the counter-based generator used everywhere.
//!
//! Every random consumer gets its own ChaCha8 stream whose seed is a keyed
//! hash of the master seed and a path of labels, e.g.
//! `(master, "simulate", disease, "train", replicate)`. Streams never depend
//! on the order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// 64-bit FNV-1a over a byte string.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One component of a derivation path.
#[derive(Debug, Clone, Copy)]
pub enum Key<'a> {
    Label(&'a str),
    Index(u64),
}

impl<'a> From<&'a str> for Key<'a> {
    fn from(s: &'a str) -> Self {
        Key::Label(s)
    }
}

impl From<u64> for Key<'_> {
    fn from(i: u64) -> Self {
        Key::Index(i)
    }
}

impl From<usize> for Key<'_> {
    fn from(i: usize) -> Self {
        Key::Index(i as u64)
    }
}

impl From<u32> for Key<'_> {
    fn from(i: u32) -> Self {
        Key::Index(u64::from(i))
    }
}

/// Derives a child seed from `seed` and a path of keys.
pub fn derive_seed(seed: u64, path: &[Key<'_>]) -> u64 {
    let mut h = mix(seed ^ 0x9e37_79b9_7f4a_7c15);
    for key in path {
        let (tag, v) = match *key {
            Key::Label(s) => (1u64, fnv1a(s.as_bytes())),
            Key::Index(i) => (2u64, i),
        };
        h = mix(h ^ mix(v.wrapping_add(tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))));
    }
    h
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_stream(seed: u64, path: &[Key<'_>]) -> Stream {
    stream(derive_seed(seed, path))
}
