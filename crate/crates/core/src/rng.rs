//! Seed expansion.
//!
//! One global seed feeds every random draw. Each consumer gets its own
//! ChaCha8 stream selected by `(domain << 56) | index`, so the values drawn for
//! a given rollout never depend on how many other rollouts ran before it or on
//! which thread ran them. Rollout indices pack `(step, group, member)` as
//! `step << 32 | group << 16 | member`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Domain {
    Verify = 1,
    Gradcheck = 2,
    Task = 3,
    Rollout = 4,
    Eval = 5,
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    debug_assert!(index < 1 << 56);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 56) | index);
    rng
}

pub fn rollout_index(step: usize, group: usize, member: usize) -> u64 {
    debug_assert!(group < 1 << 16 && member < 1 << 16);
    ((step as u64) << 32) | ((group as u64) << 16) | member as u64
}
