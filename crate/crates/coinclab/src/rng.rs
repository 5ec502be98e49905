//! Deterministic random number substreams.
//!
//! Every consumer of randomness derives its own stream from the run seed, a
//! domain constant, and an index (generation window or event id). Streams are
//! therefore independent of how work is batched: generating ten seconds in
//! one call or in forty window calls draws identical numbers, and detection
//! outcomes depend only on the event id, not on how many events came before.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Pair emission stream, indexed by generation window.
pub const DOMAIN_PAIRS: u64 = 1;
/// Herald stripe background stream, indexed by generation window.
pub const DOMAIN_BG_HERALD: u64 = 2;
/// Signal stripe background stream, indexed by generation window.
pub const DOMAIN_BG_SIGNAL: u64 = 3;
/// Per-event detection stream (jitter, pixel smear, row draw).
pub const DOMAIN_DETECT: u64 = 4;
/// Per-event efficiency thinning decision.
pub const DOMAIN_THIN: u64 = 5;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes (seed, domain, index) into a single well-scrambled 64 bit value.
pub fn substream_seed(seed: u64, domain: u64, index: u64) -> u64 {
    let mut state = seed;
    let a = splitmix64(&mut state);
    state = a ^ domain.wrapping_mul(0xd6e8_feb8_6659_fd93);
    let b = splitmix64(&mut state);
    state = b ^ index;
    splitmix64(&mut state)
}

/// Creates the ChaCha stream for one (domain, index) slot of a run.
pub fn substream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, domain, index))
}

/// Cheap keyed uniform in [0, 1) for one-shot per-event decisions. Uses the
/// top 53 bits of the mixed seed, so every representable value is an exact
/// multiple of 2^-53.
pub fn event_uniform(seed: u64, domain: u64, event_id: u32) -> f64 {
    let h = substream_seed(seed, domain, event_id as u64);
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
