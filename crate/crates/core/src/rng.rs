//! Counter-based random stream derivation.
//!
//! Every random draw in a run comes from a stream keyed by
//! `(run seed, purpose, client, round, seq)`. Streams never share state, so
//! turning one purpose on or off (e.g. channel noise) leaves every other
//! purpose's draws untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a stream is used for. The discriminant is folded into the key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Dataset = 1,
    Schedule = 2,
    Downlink = 3,
    Uplink = 4,
    Order = 5,
    Replica = 6,
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one 64-bit key.
pub fn derive_seed(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &w| mix64(acc ^ mix64(w)))
}

/// Seed of replica `r` under base seed `base`.
pub fn replica_seed(base: u64, replica: u64) -> u64 {
    derive_seed(&[base, Purpose::Replica as u64, replica])
}

pub fn stream(seed: u64, purpose: Purpose, client: u64, round: u64, seq: u64) -> Stream {
    Stream::seed_from_u64(derive_seed(&[seed, purpose as u64, client, round, seq]))
}
