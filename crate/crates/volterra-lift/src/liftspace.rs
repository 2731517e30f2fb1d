//! States of the Markovian lift and the weighted Hilbert-space geometry.
//!
//! A lift state is a vector y = (y₁, …, y_n) of coordinates against the
//! atoms of a [`DiscreteMeasure`], one d-block per atom (d = 1 for scalar
//! problems). The three norms are weighted ℓ² norms
//!
//! ```text
//! ‖y‖²_ℋ  = Σᵢ cᵢ rᵢ |yᵢ|²,
//! ‖y‖²_𝒱  = Σᵢ cᵢ (θᵢ + 1) rᵢ |yᵢ|²,
//! ‖y‖²_𝒱* = Σᵢ cᵢ rᵢ |yᵢ|² / (θᵢ + 1),
//! ```
//!
//! with cᵢ the atom weights and rᵢ = r(θᵢ) the summability weight. The
//! observation functional is μ[y] = Σᵢ cᵢ yᵢ, the generator acts diagonally
//! as (Ay)ᵢ = −θᵢ yᵢ, and the semigroup as yᵢ ↦ e^{−θᵢ t} yᵢ. Everything
//! here is exact linear algebra on the atoms; no time discretization enters.

use std::sync::Arc;

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize};

use crate::kernels::DiscreteMeasure;
use crate::{Error, Result};

/// A point of the lifted state space: `dim` coordinates per atom.
#[derive(Debug, Clone)]
pub struct LiftState {
    measure: Arc<DiscreteMeasure>,
    dim: usize,
    /// Length `measure.len() * dim`, atom-major: block i holds yᵢ ∈ ℝ^dim.
    values: Vec<f64>,
}

/// All three norms of a state plus the observation size, from one pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormReport {
    pub h: f64,
    pub v: f64,
    pub v_star: f64,
    /// ℓ¹ size of the observation integrand, Σᵢ cᵢ |yᵢ| (block ℓ² norms).
    pub l1_mu: f64,
}

impl LiftState {
    /// Zero state with `dim` coordinates per atom.
    pub fn zero(measure: Arc<DiscreteMeasure>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "state dimension must be ≥ 1".into(),
            ));
        }
        let n = measure.len() * dim;
        Ok(Self {
            measure,
            dim,
            values: vec![0.0; n],
        })
    }

    /// State from explicit coordinates, atom-major.
    pub fn from_values(
        measure: Arc<DiscreteMeasure>,
        dim: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "state dimension must be ≥ 1".into(),
            ));
        }
        let expected = measure.len() * dim;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "state coordinates must be finite, got {bad}"
            )));
        }
        Ok(Self {
            measure,
            dim,
            values,
        })
    }

    /// Scalar state (d = 1), one value per atom.
    pub fn scalar(measure: Arc<DiscreteMeasure>, values: Vec<f64>) -> Result<Self> {
        Self::from_values(measure, 1, values)
    }

    pub fn measure(&self) -> &Arc<DiscreteMeasure> {
        &self.measure
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_atoms(&self) -> usize {
        self.measure.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Block of coordinates for atom `i`.
    pub fn block(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        self.measure.check_same(&other.measure)?;
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        Ok(())
    }

    /// ℋ inner product ⟨x, y⟩_ℋ = Σᵢ cᵢ rᵢ xᵢ·yᵢ.
    pub fn inner_h(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        let c = self.measure.weights();
        let r = self.measure.r_values();
        let mut acc = 0.0;
        for i in 0..self.n_atoms() {
            let mut dot = 0.0;
            for k in 0..self.dim {
                dot += self.values[i * self.dim + k] * other.values[i * self.dim + k];
            }
            acc += c[i] * r[i] * dot;
        }
        Ok(acc)
    }

    /// All three norms and the ℓ¹ observation size in one pass.
    pub fn norms(&self) -> NormReport {
        let c = self.measure.weights();
        let th = self.measure.nodes();
        let r = self.measure.r_values();
        let mut h = 0.0;
        let mut v = 0.0;
        let mut v_star = 0.0;
        let mut l1 = 0.0;
        for i in 0..self.n_atoms() {
            let mut sq = 0.0;
            for k in 0..self.dim {
                let x = self.values[i * self.dim + k];
                sq += x * x;
            }
            let base = c[i] * r[i] * sq;
            h += base;
            v += (th[i] + 1.0) * base;
            v_star += base / (th[i] + 1.0);
            l1 += c[i] * sq.sqrt();
        }
        NormReport {
            h: h.sqrt(),
            v: v.sqrt(),
            v_star: v_star.sqrt(),
            l1_mu: l1,
        }
    }

    pub fn norm_h(&self) -> f64 {
        self.norms().h
    }

    /// Observation μ[y] = Σᵢ cᵢ yᵢ ∈ ℝ^dim.
    pub fn mu_integral(&self) -> Vec<f64> {
        let c = self.measure.weights();
        let mut out = vec![0.0; self.dim];
        for (block, &ci) in self.values.chunks_exact(self.dim).zip(c) {
            for (o, &v) in out.iter_mut().zip(block) {
                *o += ci * v;
            }
        }
        out
    }

    /// Scalar observation; errors when dim ≠ 1.
    pub fn mu_scalar(&self) -> Result<f64> {
        if self.dim != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: self.dim,
            });
        }
        Ok(self.mu_integral()[0])
    }

    /// Forcing curve (𝒦y)(t) = Σᵢ cᵢ e^{−θᵢ t} yᵢ, the observation of the
    /// semigroup orbit.
    pub fn forcing(&self, t: f64) -> Result<Vec<f64>> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "forcing time must be finite and ≥ 0, got {t}"
            )));
        }
        let c = self.measure.weights();
        let th = self.measure.nodes();
        let mut out = vec![0.0; self.dim];
        for ((block, &ci), &thi) in self.values.chunks_exact(self.dim).zip(c).zip(th) {
            let f = ci * (-thi * t).exp();
            for (o, &v) in out.iter_mut().zip(block) {
                *o += f * v;
            }
        }
        Ok(out)
    }

    /// Semigroup action yᵢ ↦ e^{−θᵢ t} yᵢ.
    pub fn semigroup_apply(&self, t: f64) -> Result<Self> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "semigroup time must be finite and ≥ 0, got {t}"
            )));
        }
        let th = self.measure.nodes();
        let mut out = self.clone();
        for (block, &thi) in out.values.chunks_exact_mut(self.dim).zip(th) {
            let f = (-thi * t).exp();
            for v in block {
                *v *= f;
            }
        }
        Ok(out)
    }

    /// Generator action (Ay)ᵢ = −θᵢ yᵢ.
    pub fn generator_apply(&self) -> Self {
        let th = self.measure.nodes();
        let mut out = self.clone();
        for i in 0..self.n_atoms() {
            for k in 0..self.dim {
                out.values[i * self.dim + k] *= -th[i];
            }
        }
        out
    }

    /// y ← y + s·other.
    pub fn axpy(&mut self, s: f64, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.values.iter_mut().zip(other.values.iter()) {
            *a += s * b;
        }
        Ok(())
    }

    /// Euclidean difference of coordinates as a new state.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(other.values.iter()) {
            *a -= b;
        }
        Ok(out)
    }
}

impl Serialize for LiftState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let blocks: Vec<&[f64]> = (0..self.n_atoms()).map(|i| self.block(i)).collect();
        let mut st = serializer.serialize_struct("LiftState", 2)?;
        st.serialize_field("nodes_ref", self.measure.digest())?;
        st.serialize_field("values", &blocks)?;
        st.end()
    }
}

/// Wire form of a serialized state; rebind to a measure with
/// [`LiftStateRepr::bind`].
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftStateRepr {
    pub nodes_ref: String,
    pub values: Vec<Vec<f64>>,
}

impl LiftStateRepr {
    /// Reattach the coordinates to `measure`, checking the recorded digest.
    pub fn bind(self, measure: Arc<DiscreteMeasure>) -> Result<LiftState> {
        if self.nodes_ref != measure.digest() {
            return Err(Error::MismatchedMeasure(
                self.nodes_ref.chars().take(12).collect(),
                measure.digest().chars().take(12).collect(),
            ));
        }
        if self.values.len() != measure.len() {
            return Err(Error::DimensionMismatch {
                expected: measure.len(),
                got: self.values.len(),
            });
        }
        let dim = self.values.first().map_or(1, Vec::len);
        if dim == 0 || self.values.iter().any(|b| b.len() != dim) {
            return Err(Error::InvalidParameter(
                "state blocks must share one nonzero length".into(),
            ));
        }
        let flat: Vec<f64> = self.values.into_iter().flatten().collect();
        LiftState::from_values(measure, dim, flat)
    }
}

/// Smallest m ≥ 1 with Σᵢ cᵢ / ((θᵢ + m) rᵢ) ≤ ε, together with
/// M = ε·(m − 1).
///
/// The left side is strictly decreasing in m with limit 0, so a finite m
/// always exists; it is found by doubling then bisection to relative width
/// 10⁻⁹, returning the upper endpoint so the constraint holds exactly.
///
/// # Errors
/// Non-positive or non-finite ε.
pub fn eps_m_constant(measure: &DiscreteMeasure, eps: f64) -> Result<(f64, f64)> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ε must be finite and > 0, got {eps}"
        )));
    }
    let phi = |m: f64| -> f64 {
        measure
            .nodes()
            .iter()
            .zip(measure.weights())
            .zip(measure.r_values())
            .map(|((&th, &c), &r)| c / ((th + m) * r))
            .sum()
    };
    if phi(1.0) <= eps {
        return Ok((1.0, 0.0));
    }
    let mut lo = 1.0;
    let mut hi = 2.0;
    while phi(hi) > eps {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::InvalidParameter(
                "ε–M search overflowed; ε is too small for this measure".into(),
            ));
        }
    }
    while hi - lo > 1e-9 * hi {
        let mid = 0.5 * (lo + hi);
        if phi(mid) > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((hi, eps * (hi - 1.0)))
}
