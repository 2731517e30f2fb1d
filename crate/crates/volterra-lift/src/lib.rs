//! Markovian lifts of stochastic Volterra integral equations with completely
//! monotone kernels.
//!
//! A completely monotone kernel K admits a Bernstein representation
//!
//! ```text
//! K(t) = ∫_[0,∞) e^{−θt} μ(dθ),       t > 0,
//! ```
//!
//! and the scalar Volterra equation
//!
//! ```text
//! X_t = x(t) + ∫_0^t K(t−s) b(X_s) ds + ∫_0^t K(t−s) σ(X_s) dW_s
//! ```
//!
//! is the μ-average X_t = μ[Y_t] of an infinite-dimensional Ornstein-Uhlenbeck
//! type evolution indexed by the decay rate θ:
//!
//! ```text
//! dY_t(θ) = −θ Y_t(θ) dt + b(μ[Y_t]) dt + σ(μ[Y_t]) dW_t,   μ[Y] = ∫ Y(θ) μ(dθ).
//! ```
//!
//! The lift lives on a weighted space ℋ = L²(μ_r) with a non-increasing weight
//! r, 1∧θ^{−1/2} ≤ r(θ) ≤ 1, chosen so that μ_r(dθ) = r(θ)μ(dθ) is finite even
//! when μ is not (singular kernels such as the fractional family). This crate
//! works with finite discrete measures μ = Σ_i c_i δ_{θ_i}, obtained either
//! from an exponential-sum kernel directly or by moment-matched geometric
//! binning of a kernel density.
//!
//! Modules:
//!
//! * [`kernels`] — kernel variants, Bernstein measures, weights, geometric
//!   discretization and reconstruction error.
//! * [`liftspace`] — lift states, the ℋ/𝒱/𝒱* norm triple, μ-averaging,
//!   semigroup and generator, interpolation constants.
//! * [`dynamics`] — coefficient families, exact-OU and Euler schemes, direct
//!   Volterra simulation, equivalence gaps, stochastic convolution, Picard
//!   iteration, a-priori bounds.
//! * [`gauss`] — Gaussian analysis for b = 0, σ = 1: covariance operators,
//!   traces, invariant measure sampling, Volterra covariances, the
//!   strong-Feller witness ratio.
//! * [`coupling`] — asymptotic coupling with Girsanov control: admissible
//!   truncation level m, coupling constant λ, entropy / distance-decay
//!   estimates and the log-Harnack check.
//! * [`validate`] — self-check suite (identities plus a deliberate negative
//!   control) used by the CLI `validate` command.

pub mod coupling;
pub mod dynamics;
pub mod gauss;
pub mod kernels;
pub mod liftspace;
mod quad;
pub mod rng;
pub mod validate;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or operation received an invalid argument.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// Two lift states (or a state and an operator) live on different
    /// discrete measures.
    #[error("mismatched discrete measures: {0} vs {1}")]
    MismatchedMeasure(String, String),
    /// State dimension does not match what the operation requires.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// Two paths were compared on different time grids.
    #[error("time grids differ: {0}")]
    GridMismatch(String),
    /// The operation requires an invariant measure but the discrete measure
    /// has a zero node (or the kernel family admits none).
    #[error("no invariant measure: {0}")]
    NoInvariantMeasure(String),
    /// The kernel variant has an atomic Bernstein measure, no density.
    #[error("kernel variant has no Bernstein density (atomic measure)")]
    DensityUnavailable,
    /// A singular kernel cannot be simulated directly without discretization.
    #[error("kernel is singular at t=0; discretize it first: {0}")]
    SingularKernel(String),
    /// dt must divide the horizon.
    #[error("dt = {dt} does not divide t_horizon = {t_horizon} (relative remainder {remainder:.3e})")]
    NonDivisibleGrid {
        dt: f64,
        t_horizon: f64,
        remainder: f64,
    },
    /// A simulated path exceeded the overflow guard.
    #[error("path {path} exceeded the blow-up guard 1e300 at step {step}")]
    PathBlowUp { path: u64, step: usize },
    /// Coefficients lack a declared σ-inverse bound (or σ right inverse).
    #[error("coefficients do not declare an invertible diffusion: {0}")]
    MissingSigmaInverse(String),
    /// Cholesky factorization failed.
    #[error("Cholesky factorization failed: {0}")]
    CholeskyFailure(String),
    /// JSON (de)serialization failure.
    #[error("serialization: {0}")]
    Serialization(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Hex-encoded SHA-256 digest of a byte slice.
///
/// Used for measure identities in serialized lift states and for output
/// manifests. Stable across platforms.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}
