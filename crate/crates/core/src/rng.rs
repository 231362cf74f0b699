//! Deterministic RNG stream derivation.
//!
//! One master seed; per-worker, per-purpose, per-round streams are
//! derived by packing `(master, purpose, worker, round)` into the
//! ChaCha8 seed words. Streams are independent of how many workers a
//! run has, so adding a worker never perturbs existing streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ids::WorkerId;

/// Stream purposes; the discriminant is part of the seed.
#[derive(Debug, Clone, Copy)]
pub enum Purpose {
    InitModel = 1,
    TaskGen = 2,
    PullPlan = 3,
    Reroute = 4,
    Minibatch = 5,
    ServerPick = 6,
    JoinPull = 7,
}

/// Worker slot used for streams that are not tied to a worker.
pub const GLOBAL: WorkerId = WorkerId(u32::MAX);

pub fn derive(master: u64, purpose: Purpose, worker: WorkerId, round: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    seed[16..24].copy_from_slice(&(worker.0 as u64).to_le_bytes());
    seed[24..32].copy_from_slice(&round.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// Stable 64-bit fingerprint (FNV-1a) used for trace checkpoints.
pub fn fingerprint(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
