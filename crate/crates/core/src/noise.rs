//! Counter-based deterministic noise.
//!
//! Every draw is a pure function of `(seed, scenario, repetition, stream,
//! tick, index)`, so runs can execute in any order or in parallel and still
//! observe the same perturbations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Independent noise channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    SpeedMeasurement = 1,
    WaypointJitter = 2,
    SuiteLayout = 3,
}

/// Identifies one run's noise sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseKey {
    pub seed: u64,
    pub scenario: u64,
    pub repetition: u64,
}

impl NoiseKey {
    pub fn new(seed: u64, scenario: usize, repetition: u32) -> NoiseKey {
        NoiseKey {
            seed,
            scenario: scenario as u64,
            repetition: repetition as u64,
        }
    }

    /// A generator dedicated to one `(stream, tick, index)` cell.
    pub fn rng(&self, stream: Stream, tick: u64, index: u64) -> ChaCha8Rng {
        let mut h = mix(self.seed ^ 0x6a09_e667_f3bc_c908);
        for word in [self.scenario, self.repetition, stream as u64, tick, index] {
            h = mix(h ^ word);
        }
        ChaCha8Rng::seed_from_u64(h)
    }

    /// Standard normal draw scaled by `sigma`.
    pub fn gaussian(&self, stream: Stream, tick: u64, index: u64, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return 0.0;
        }
        let z: f64 = self.rng(stream, tick, index).sample(StandardNormal);
        sigma * z
    }
}

/// SplitMix64 finalizer, used only to derive generator seeds from counters.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
