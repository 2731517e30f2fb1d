//! Completely monotone kernels, their Bernstein measures and discretizations.
//!
//! A kernel K is completely monotone when K(t) = ∫ e^{−θt} μ(dθ) for a Radon
//! measure μ on [0, ∞). The crate calls K *regular* when μ([1, ∞)) < ∞ and
//! *singular* otherwise; singular kernels blow up at t = 0 and need a weight
//! r(θ) = 1 ∧ θ^{−1/p} to make the lifted state space finite.
//!
//! Supported families:
//!
//! ```text
//! ExponentialSum            K(t) = Σ_i c_i e^{−θ_i t}           μ = Σ c_i δ_{θ_i}
//! Fractional(α)             K(t) = t^{α−1}/Γ(α)                 dμ = θ^{−α} dθ / (Γ(α)Γ(1−α))
//! Gamma(α, β)               K(t) = e^{−βt} t^{α−1}/Γ(α)         dμ = (θ−β)^{−α} 1_{θ>β} dθ / (Γ(α)Γ(1−α))
//! Shifted(base, δ)          K(t) = K_base(t+δ)                  dμ = e^{−δθ} dμ_base
//! Damped(base, β)           K(t) = e^{−βt} K_base(t)            μ = μ_base shifted by +β
//! ```
//!
//! with α ∈ (1/2, 1), β > 0, δ > 0.

mod discretize;
mod kernel;
mod measure;
mod weight;

pub use discretize::{kernel_l2_error, DiscretizeScheme};
pub use kernel::{Kernel, MeasureValue};
pub use measure::DiscreteMeasure;
pub use weight::WeightFunction;
