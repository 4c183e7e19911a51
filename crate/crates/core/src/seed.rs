// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seed derivation.
//!
//! All randomness in the harness flows from a single 64-bit master seed.
//! Child seeds are derived with [`split`]:
//!
//! ```text
//! split(seed, label, index) = mix(mix(seed ^ fnv1a64(label)) + index)
//! ```
//!
//! where `mix` is the SplitMix64 finalizer (Steele, Lea & Flood 2014) and
//! `fnv1a64` is 64-bit FNV-1a over the UTF-8 bytes of `label`. Random
//! streams are ChaCha8 ([`rand_chacha::ChaCha8Rng`]) seeded through
//! `SeedableRng::seed_from_u64`. Both algorithms are published and
//! platform-independent, so a logged seed replays bit-for-bit anywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Labels used by the harness when fanning out seeds.
pub mod stream {
    pub const ENV: &str = "env";
    pub const ARM: &str = "arm";
    pub const STEP: &str = "step";
    pub const COMPLETION: &str = "completion";
    pub const SELECT: &str = "select";
    pub const RUN: &str = "run";
    pub const EVAL_PROMPT: &str = "eval-prompt";
    pub const EVAL_SAMPLER: &str = "eval-sampler";
    pub const TRACE: &str = "trace";
    pub const BOOTSTRAP: &str = "bootstrap";
    pub const SHUFFLE: &str = "shuffle";
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 output function.
#[inline]
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Derive the `index`-th child seed of `seed` on the stream named `label`.
pub fn split(seed: u64, label: &str, index: u64) -> u64 {
    mix64(mix64(seed ^ fnv1a64(label.as_bytes())).wrapping_add(index))
}

/// Deterministic random stream for a seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
