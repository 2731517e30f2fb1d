//! Lift-space weight functions r(θ).
//!
//! The lift space ℋ = L²(μ_r) uses μ_r(dθ) = r(θ) μ(dθ). Admissible weights
//! are non-increasing with 1 ∧ θ^{−1/2} ≤ r(θ) ≤ 1; the crate supports the
//! constant weight r ≡ 1 (enough for regular kernels, where μ([1,∞)) < ∞)
//! and the power family r(θ) = 1 ∧ θ^{−1/p} with p ≥ 2.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Weight r(θ) on the Bernstein measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeightFunction {
    /// r ≡ 1.
    One,
    /// r(θ) = 1 ∧ θ^{−1/p}, p ≥ 2.
    Power { p: f64 },
}

impl WeightFunction {
    /// Power weight with exponent parameter `p`.
    ///
    /// # Errors
    /// Rejects p < 2 (the admissibility floor: r must dominate 1 ∧ θ^{−1/2})
    /// and non-finite p.
    pub fn power(p: f64) -> Result<Self> {
        if !p.is_finite() || p < 2.0 {
            return Err(Error::InvalidParameter(format!(
                "weight exponent p must be finite and ≥ 2, got {p}"
            )));
        }
        Ok(WeightFunction::Power { p })
    }

    /// Evaluate r(θ) for θ ≥ 0.
    ///
    /// θ = 0 gives r = 1 for every admissible weight (θ^{−1/p} → ∞ is capped
    /// at 1).
    pub fn eval(&self, theta: f64) -> f64 {
        debug_assert!(theta >= 0.0, "weights are defined on θ ≥ 0");
        match self {
            WeightFunction::One => 1.0,
            WeightFunction::Power { p } => {
                if theta <= 1.0 {
                    1.0
                } else {
                    theta.powf(-1.0 / p)
                }
            }
        }
    }

    /// Whether this is the constant weight r ≡ 1.
    pub fn is_one(&self) -> bool {
        matches!(self, WeightFunction::One)
    }

    /// The exponent p, if this is a power weight.
    pub fn exponent(&self) -> Option<f64> {
        match self {
            WeightFunction::One => None,
            WeightFunction::Power { p } => Some(*p),
        }
    }

    /// JSON encoding used inside measure documents: `null` for r ≡ 1, the
    /// exponent for power weights.
    pub(crate) fn to_weight_p(self) -> Option<f64> {
        self.exponent()
    }

    /// Inverse of [`Self::to_weight_p`].
    pub(crate) fn from_weight_p(p: Option<f64>) -> Result<Self> {
        match p {
            None => Ok(WeightFunction::One),
            Some(p) => WeightFunction::power(p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_rejects_inadmissible_exponent() {
        assert!(WeightFunction::power(1.9).is_err());
        assert!(WeightFunction::power(f64::NAN).is_err());
        assert!(WeightFunction::power(2.0).is_ok());
    }

    #[test]
    fn weight_bounds_hold_at_reference_points() {
        // 1 ∧ θ^{−1/2} ≤ r(θ) ≤ 1 at θ ∈ {0, 1e−6, 1, 1e3}.
        let w = WeightFunction::power(2.0).unwrap();
        for theta in [0.0, 1e-6, 1.0, 1e3] {
            let r = w.eval(theta);
            let floor = if theta <= 1.0 { 1.0 } else { theta.powf(-0.5) };
            assert!(r <= 1.0 && r >= floor, "θ={theta}: r={r}, floor={floor}");
        }
        assert_eq!(w.eval(0.0), 1.0);
        assert_eq!(w.eval(1e3), 1e3f64.powf(-0.5));
    }

    #[test]
    fn weight_is_non_increasing() {
        let w = WeightFunction::power(3.5).unwrap();
        let grid = [0.0, 0.5, 1.0, 2.0, 10.0, 1e4];
        for pair in grid.windows(2) {
            assert!(w.eval(pair[0]) >= w.eval(pair[1]));
        }
    }
}
