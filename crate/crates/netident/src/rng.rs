//! Deterministic random streams keyed by structured tuples.
//!
//! Every random quantity in the crate (initial conditions, measurement
//! noise) is drawn from its own short-lived generator whose seed is a hash
//! of (base seed, domain tag, indices...). That makes each draw a pure
//! function of its key: batches can run on any number of threads, stages can
//! redraw rejected initial conditions, and the results never change.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep streams for different purposes disjoint even when the
/// numeric indices collide.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Domain {
    InitialState = 1,
    Noise = 2,
    StageSeed = 3,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A generator whose output depends only on the key parts.
pub(crate) fn stream(domain: Domain, parts: &[u64]) -> ChaCha8Rng {
    let mut state = 0x6a09_e667_f3bc_c908 ^ (domain as u64);
    let mut key = [0u8; 32];
    for part in parts {
        state ^= part.wrapping_mul(0xff51_afd7_ed55_8ccd);
        splitmix64(&mut state);
    }
    for word in 0..4 {
        key[word * 8..word * 8 + 8].copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Derives a sub-seed, used to give each identification stage its own
/// family of streams.
pub(crate) fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut state = seed ^ ((Domain::StageSeed as u64) << 56) ^ index.rotate_left(17);
    splitmix64(&mut state);
    splitmix64(&mut state)
}
