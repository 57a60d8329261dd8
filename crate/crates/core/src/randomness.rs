//! Deterministic random streams.
//!
//! A stream is a xoshiro256** generator whose 256-bit state is filled from a
//! SplitMix64 sequence keyed by `(global_seed, stream_id)`. All constants are
//! spelled out here and the transcendental functions come from `libm`, so a
//! given key produces the same bits on every platform.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{GaussianVector, SYNTH_PIXELS};

pub const ALGORITHM_TAG: &str = "xoshiro256starstar/splitmix64-key/box-muller-libm/v1";

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const SPLITMIX_MUL1: u64 = 0xBF58_476D_1CE4_E5B9;
const SPLITMIX_MUL2: u64 = 0x94D0_49BB_1331_11EB;
/// Keeps `stream_id` and `global_seed` from entering the mixer symmetrically.
const STREAM_SALT: u64 = 0xD1B5_4A32_D192_ED03;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(SPLITMIX_MUL1);
    z = (z ^ (z >> 27)).wrapping_mul(SPLITMIX_MUL2);
    z ^ (z >> 31)
}

struct SplitMix64(u64);

impl SplitMix64 {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(SPLITMIX_GAMMA);
        mix64(self.0)
    }
}

/// A single-owner random stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    state: [u64; 4],
    stream_id: u64,
}

pub fn derive_stream(global_seed: u64, stream_id: u64) -> RngStream {
    let key = mix64(global_seed) ^ mix64(stream_id ^ STREAM_SALT).rotate_left(17);
    let mut sm = SplitMix64(key);
    let mut state = [sm.next(), sm.next(), sm.next(), sm.next()];
    if state == [0; 4] {
        state[0] = SPLITMIX_GAMMA;
    }
    RngStream { state, stream_id }
}

impl RngStream {
    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn algorithm_tag(&self) -> &'static str {
        ALGORITHM_TAG
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, bound)`, unbiased (Lemire's multiply-and-reject).
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(bound);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// One Box–Muller pair of standard normals.
    pub fn standard_normal_pair(&mut self) -> (f64, f64) {
        // u1 in (0, 1] keeps ln finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        box_muller(u1, u2)
    }
}

/// Maps `u1 in (0, 1]` and `u2 in [0, 1)` to two independent standard normals.
pub fn box_muller(u1: f64, u2: f64) -> (f64, f64) {
    let radius = libm::sqrt(-2.0 * libm::log(u1));
    let theta = 2.0 * PI * u2;
    (radius * libm::cos(theta), radius * libm::sin(theta))
}

fn check_variance(variance: f64) -> Result<()> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::Parameter(format!(
            "variance must be positive and finite, got {variance}"
        )));
    }
    Ok(())
}

/// `n` draws from N(mean, variance). Each Box–Muller pair is consumed in
/// order; for odd `n` the spare of the last pair is dropped.
pub fn sample_gaussian(stream: &mut RngStream, n: usize, mean: f64, variance: f64) -> Result<Vec<f64>> {
    check_variance(variance)?;
    if n == 0 {
        return Err(Error::Parameter("sample count must be positive".into()));
    }
    let sd = variance.sqrt();
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let (a, b) = stream.standard_normal_pair();
        out.push(mean + sd * a);
        out.push(mean + sd * b);
    }
    out.truncate(n);
    Ok(out)
}

/// The 1024 zero-mean draws behind one synthetic image.
pub fn gaussian_vector(stream: &mut RngStream, variance: f64) -> Result<GaussianVector> {
    let draws = sample_gaussian(stream, SYNTH_PIXELS, 0.0, variance)?;
    GaussianVector::from_raw(draws.into_iter().map(|v| v as f32).collect())
}

/// Fisher–Yates shuffle in place.
pub fn shuffle_in_place<T>(stream: &mut RngStream, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = stream.below(i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

pub fn shuffle<T>(stream: &mut RngStream, mut items: Vec<T>) -> Vec<T> {
    shuffle_in_place(stream, &mut items);
    items
}
