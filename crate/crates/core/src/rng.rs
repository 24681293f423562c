//! Splittable, counter-style randomness.
//!
//! Every experiment owns a single master seed. Trials and users get
//! independent ChaCha8 substreams derived by hashing `(master, trial, user)`,
//! so a trial can run on any thread (or be skipped entirely) without shifting
//! the draws of any other trial, and paired experiments that share a master
//! seed see identical per-user draws up to the point their trajectories
//! diverge.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; the standard 64-bit avalanche mix.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const TRIAL_TAG: u64 = 0x7472_6961_6c5f_7461; // "trial_ta"
const USER_TAG: u64 = 0x7573_6572_5f74_6167; // "user_tag"

/// Substream for one trial of one experiment.
pub fn trial_rng(master: u64, trial: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(mix64(master ^ TRIAL_TAG) ^ trial))
}

/// Substream for one user (query position) within one trial.
///
/// Streams are keyed by query position, not by profile identity: order
/// searches that permute the same profile set score every permutation on the
/// same position-indexed draws (common random numbers).
pub fn user_rng(master: u64, trial: u64, position: u64) -> ChaCha8Rng {
    let t = mix64(mix64(master ^ TRIAL_TAG) ^ trial);
    ChaCha8Rng::seed_from_u64(mix64(mix64(t ^ USER_TAG) ^ position))
}
