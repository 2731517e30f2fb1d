//! Counter-addressable Gaussian noise.
//!
//! Every simulated path draws its increments from a ChaCha8 stream keyed by
//! the run seed, with the path index as the stream number and the step index
//! mapped to a fixed word offset. Each (seed, path, step, coordinate) then
//! names one Gaussian regardless of scheduling, so parallel ensembles are
//! bit-identical to serial ones and a direct solver can replay the noise of
//! a lifted solver without storing it.
//!
//! Normals come from Box–Muller in pairs, each pair consuming exactly two
//! u64 draws (4 ChaCha words), so a step with d coordinates occupies
//! 4·⌈d/2⌉ words.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic per-path, per-step Gaussian source.
#[derive(Debug, Clone)]
pub struct PathRng {
    key: [u8; 32],
    dim: usize,
    words_per_step: u128,
}

impl PathRng {
    /// Source for `dim` normals per step under the given run seed.
    pub fn new(seed: u64, dim: usize) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&seed.rotate_left(17).to_le_bytes());
        let pairs = dim.div_ceil(2) as u128;
        Self {
            key,
            dim,
            words_per_step: 4 * pairs,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Fill `out` with the normals of (path, step). `out.len()` must be the
    /// `dim` the source was built for.
    pub fn fill_step_normals(&self, path: u64, step: usize, out: &mut [f64]) {
        assert_eq!(out.len(), self.dim, "normal buffer length mismatch");
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(path);
        rng.set_word_pos(self.words_per_step * step as u128);
        standard_normals(&mut rng, out);
    }
}

/// Fill `out` with independent standard normals via Box–Muller, consuming
/// exactly two u64 draws per pair (an odd tail still burns the full pair).
pub fn standard_normals<R: RngCore>(rng: &mut R, out: &mut [f64]) {
    let mut i = 0;
    while i < out.len() {
        // u1 ∈ (0, 1] so the log is finite; u2 ∈ [0, 1).
        let u1 = 1.0 - (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let rad = (-2.0 * u1.ln()).sqrt();
        let ang = 2.0 * std::f64::consts::PI * u2;
        out[i] = rad * ang.cos();
        i += 1;
        if i < out.len() {
            out[i] = rad * ang.sin();
            i += 1;
        }
    }
}
