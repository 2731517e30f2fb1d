//! Closed-form analytics for the Gaussian case b = 0, σ = 1, scalar noise.
//!
//! With additive unit noise the lift is an infinite family of coupled OU
//! coordinates, everything is Gaussian, and each claim reduces to explicit
//! node sums:
//!
//! ```text
//! (Q_t y)ᵢ = Σⱼ rⱼcⱼ yⱼ (1 − e^{−(θᵢ+θⱼ)t})/(θᵢ+θⱼ),
//! Tr[Q_t] = t·μ({0}) + Σ_{θⱼ>0} cⱼrⱼ (1 − e^{−2θⱼt})/(2θⱼ),
//! (Q y)ᵢ  = Σⱼ rⱼcⱼ yⱼ/(θᵢ+θⱼ),
//! ```
//!
//! with θᵢ + θⱼ = 0 entries taking their analytic limits. An invariant
//! Gaussian measure exists exactly when no node sits at zero; its
//! coordinate law has the Cauchy covariance Σᵢⱼ = 1/(θᵢ+θⱼ). A transition
//! kernel that smooths would require e^{−·t} to map into the Cameron–
//! Martin range of Q_t^{1/2}; the witness search measures how badly that
//! containment degrades as a singular measure is refined, via the ratio
//! ‖Q_t^{1/2}1_B‖/‖e^{−·t}1_B‖ over contiguous node bands B.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::RngCore;
use serde::ser::SerializeStruct;
use serde::Serialize;

use crate::kernels::{DiscreteMeasure, Kernel};
use crate::liftspace::LiftState;
use crate::rng::{standard_normals, PathRng};
use crate::{Error, Result};

fn require_scalar(y: &LiftState) -> Result<()> {
    if y.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: y.dim(),
        });
    }
    Ok(())
}

fn require_invariant(dm: &DiscreteMeasure) -> Result<()> {
    if !dm.invariant_criterion() {
        return Err(Error::NoInvariantMeasure(
            "the measure charges θ = 0, so Tr[Q_t] grows linearly and no invariant \
             Gaussian measure exists"
                .into(),
        ));
    }
    Ok(())
}

/// (1 − e^{−st})/s with the s = 0 limit t.
fn ou_integral(s: f64, t: f64) -> f64 {
    if s == 0.0 {
        t
    } else {
        (1.0 - (-s * t).exp()) / s
    }
}

/// Apply the finite-time covariance operator Q_t to a scalar state.
pub fn qt_apply(dm: &Arc<DiscreteMeasure>, t: f64, y: &LiftState) -> Result<LiftState> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "covariance time must be finite and ≥ 0, got {t}"
        )));
    }
    require_scalar(y)?;
    dm.check_same(y.measure())?;
    let th = dm.nodes();
    let c = dm.weights();
    let r = dm.r_values();
    let v = y.values();
    let mut out = vec![0.0; th.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..th.len() {
            acc += r[j] * c[j] * v[j] * ou_integral(th[i] + th[j], t);
        }
        *o = acc;
    }
    LiftState::scalar(dm.clone(), out)
}

/// Apply the invariant covariance operator Q (the t → ∞ limit of Q_t).
pub fn q_inf_apply(dm: &Arc<DiscreteMeasure>, y: &LiftState) -> Result<LiftState> {
    require_invariant(dm)?;
    require_scalar(y)?;
    dm.check_same(y.measure())?;
    let th = dm.nodes();
    let c = dm.weights();
    let r = dm.r_values();
    let v = y.values();
    let mut out = vec![0.0; th.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..th.len() {
            acc += r[j] * c[j] * v[j] / (th[i] + th[j]);
        }
        *o = acc;
    }
    LiftState::scalar(dm.clone(), out)
}

/// Tr[Q_t] = t·μ({0}) + Σ_{θⱼ>0} cⱼrⱼ(1 − e^{−2θⱼt})/(2θⱼ).
pub fn trace_qt(dm: &DiscreteMeasure, t: f64) -> Result<f64> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "trace time must be finite and ≥ 0, got {t}"
        )));
    }
    let mut acc = 0.0;
    for ((&th, &c), &r) in dm.nodes().iter().zip(dm.weights()).zip(dm.r_values()) {
        acc += c * r * ou_integral(2.0 * th, t);
    }
    Ok(acc)
}

/// Variance of the stationary observation, Σᵢⱼ cᵢcⱼ/(θᵢ+θⱼ) = ∫₀^∞ K̄(s)²ds.
pub fn stationary_variance(dm: &DiscreteMeasure) -> Result<f64> {
    require_invariant(dm)?;
    let th = dm.nodes();
    let c = dm.weights();
    let mut acc = 0.0;
    for i in 0..th.len() {
        for j in 0..th.len() {
            acc += c[i] * c[j] / (th[i] + th[j]);
        }
    }
    Ok(acc)
}

/// Closed-form ∫₀^∞ K(s)²ds where one is known: exponential sums (and
/// damped sums) via the double sum, the Gamma kernel via
/// Γ(2α−1)/(Γ(α)²(2β)^{2α−1}). None for kernels without a finite closed
/// form here.
pub fn stationary_variance_closed(kernel: &Kernel) -> Option<f64> {
    if let Some(atoms) = kernel.atoms() {
        if atoms.iter().any(|&(th, _)| th == 0.0) {
            return None;
        }
        let mut acc = 0.0;
        for &(ti, ci) in &atoms {
            for &(tj, cj) in &atoms {
                acc += ci * cj / (ti + tj);
            }
        }
        return Some(acc);
    }
    if let Kernel::Gamma { alpha, beta } = kernel {
        let g = statrs::function::gamma::gamma;
        return Some(
            g(2.0 * alpha - 1.0)
                / (g(*alpha) * g(*alpha) * (2.0 * beta).powf(2.0 * alpha - 1.0)),
        );
    }
    None
}

/// Variance of the stationary forcing tail, Σᵢⱼ cᵢcⱼ e^{−(θᵢ+θⱼ)t}/(θᵢ+θⱼ)
/// = ∫₀^∞ K̄(t+s)²ds. Equals [`stationary_variance`] at t = 0.
pub fn forcing_variance(dm: &DiscreteMeasure, t: f64) -> Result<f64> {
    require_invariant(dm)?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "forcing time must be finite and ≥ 0, got {t}"
        )));
    }
    let th = dm.nodes();
    let c = dm.weights();
    let mut acc = 0.0;
    for i in 0..th.len() {
        for j in 0..th.len() {
            let s = th[i] + th[j];
            acc += c[i] * c[j] * (-s * t).exp() / s;
        }
    }
    Ok(acc)
}

/// Cov(X_s, X_t) of the zero-forcing Gaussian solution,
/// ∫₀^{s∧t} K̄(s−u)K̄(t−u)du expanded over nodes.
pub fn volterra_covariance(dm: &DiscreteMeasure, s: f64, t: f64) -> Result<f64> {
    for v in [s, t] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "covariance times must be finite and ≥ 0, got {v}"
            )));
        }
    }
    let th = dm.nodes();
    let c = dm.weights();
    let m = s.min(t);
    let mut acc = 0.0;
    for i in 0..th.len() {
        for j in 0..th.len() {
            let sum = th[i] + th[j];
            let term = if sum == 0.0 {
                m
            } else {
                ((-th[i] * (s - m) - th[j] * (t - m)).exp() - (-th[i] * s - th[j] * t).exp())
                    / sum
            };
            acc += c[i] * c[j] * term;
        }
    }
    Ok(acc)
}

/// Reusable sampler of the invariant Gaussian coordinate law
/// 𝒩(0, Σ), Σᵢⱼ = 1/(θᵢ+θⱼ).
pub struct InvariantSampler {
    dm: Arc<DiscreteMeasure>,
    /// Lower-triangular Cholesky factor of Σ, row-major.
    chol: Vec<f64>,
}

/// Lower-triangular Cholesky factor in row-major layout, retrying once
/// with 10⁻¹² diagonal jitter.
fn chol_row_major(base: DMatrix<f64>, what: &str) -> Result<Vec<f64>> {
    let n = base.nrows();
    let factor = base
        .clone()
        .cholesky()
        .or_else(|| {
            let jitter = DMatrix::identity(n, n) * 1e-12;
            (base + jitter).cholesky()
        })
        .ok_or_else(|| {
            Error::CholeskyFailure(format!(
                "{what} covariance is numerically singular even with 1e-12 jitter; \
                 nearly coincident nodes should be merged"
            ))
        })?;
    let l = factor.l();
    let mut chol = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            chol[i * n + j] = l[(i, j)];
        }
    }
    Ok(chol)
}

fn lower_apply(chol: &[f64], z: &[f64], values: &mut [f64]) {
    let n = values.len();
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..=i {
            acc += chol[i * n + j] * z[j];
        }
        values[i] = acc;
    }
}

impl InvariantSampler {
    /// Factor the Cauchy covariance once. A first failure retries with
    /// 10⁻¹² diagonal jitter.
    pub fn new(dm: Arc<DiscreteMeasure>) -> Result<Self> {
        require_invariant(&dm)?;
        let n = dm.len();
        let th = dm.nodes();
        let base = DMatrix::from_fn(n, n, |i, j| 1.0 / (th[i] + th[j]));
        let chol = chol_row_major(base, "invariant")?;
        Ok(Self { dm, chol })
    }

    pub fn measure(&self) -> &Arc<DiscreteMeasure> {
        &self.dm
    }

    fn state_from_normals(&self, z: &[f64]) -> LiftState {
        let mut values = vec![0.0; self.dm.len()];
        lower_apply(&self.chol, z, &mut values);
        LiftState::scalar(self.dm.clone(), values).expect("sampler state is finite")
    }

    /// Draw one stationary state from the supplied generator.
    pub fn sample_with<R: RngCore>(&self, rng: &mut R) -> LiftState {
        let mut z = vec![0.0; self.dm.len()];
        standard_normals(rng, &mut z);
        self.state_from_normals(&z)
    }

    /// The stationary state of ensemble path `path` under `seed`:
    /// deterministic, so ensembles stay reproducible across thread counts.
    pub fn state_for_path(&self, seed: u64, path: u64) -> LiftState {
        let n = self.dm.len();
        let rng = PathRng::new(seed ^ 0x9e37_79b9_7f4a_7c15, n);
        let mut z = vec![0.0; n];
        rng.fill_step_normals(path, 0, &mut z);
        self.state_from_normals(&z)
    }
}

/// One-shot draw from the invariant coordinate law.
pub fn sample_invariant<R: RngCore>(dm: &Arc<DiscreteMeasure>, rng: &mut R) -> Result<LiftState> {
    Ok(InvariantSampler::new(dm.clone())?.sample_with(rng))
}

/// Exact Gaussian transition over a fixed elapsed time for the additive
/// scalar case (b = 0, σ = 1): Y_t = S_t y + G with G ~ 𝒩(0, Σ_t) and
/// Σ_t[i][j] = (1−e^{−(θᵢ+θⱼ)t})/(θᵢ+θⱼ), value t when θᵢ+θⱼ = 0.
///
/// The semigroup property makes one application over t identical in law
/// to any number of sub-steps, so no time-stepping bias enters.
pub struct TransitionSampler {
    dm: Arc<DiscreteMeasure>,
    decay: Vec<f64>,
    /// Lower-triangular Cholesky factor of Σ_t, row-major.
    chol: Vec<f64>,
}

impl TransitionSampler {
    /// Factor the transition covariance for elapsed time `t` once. Unlike
    /// the invariant law, this exists for every measure, zero node
    /// included.
    pub fn new(dm: Arc<DiscreteMeasure>, t: f64) -> Result<Self> {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "transition time must be finite and > 0, got {t}"
            )));
        }
        let n = dm.len();
        let th = dm.nodes();
        let base = DMatrix::from_fn(n, n, |i, j| {
            let s = th[i] + th[j];
            ou_integral(s, t)
        });
        let chol = chol_row_major(base, "transition")?;
        let decay = th.iter().map(|&theta| (-theta * t).exp()).collect();
        Ok(Self { dm, decay, chol })
    }

    pub fn measure(&self) -> &Arc<DiscreteMeasure> {
        &self.dm
    }

    fn evolve(&self, y: &LiftState, z: &[f64]) -> Result<LiftState> {
        self.dm.check_same(y.measure())?;
        if y.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: y.dim(),
            });
        }
        let n = self.dm.len();
        let mut values = vec![0.0; n];
        lower_apply(&self.chol, z, &mut values);
        for (i, v) in values.iter_mut().enumerate() {
            *v += self.decay[i] * y.values()[i];
        }
        LiftState::scalar(self.dm.clone(), values)
    }

    /// Evolve `y` by the fixed elapsed time with fresh noise from `rng`.
    pub fn apply_with<R: RngCore>(&self, y: &LiftState, rng: &mut R) -> Result<LiftState> {
        let mut z = vec![0.0; self.dm.len()];
        standard_normals(rng, &mut z);
        self.evolve(y, &z)
    }

    /// Deterministic per-path transition noise, independent of the
    /// invariant sampler's stream under the same seed.
    pub fn apply_for_path(&self, y: &LiftState, seed: u64, path: u64) -> Result<LiftState> {
        let n = self.dm.len();
        let rng = PathRng::new(seed ^ 0xc2b2_ae3d_27d4_eb4f, n);
        let mut z = vec![0.0; n];
        rng.fill_step_normals(path, 0, &mut z);
        self.evolve(y, &z)
    }
}

/// Result of the smoothing-failure search at time t and threshold ε.
#[derive(Debug, Clone)]
pub struct WitnessReport {
    pub t: f64,
    pub epsilon: f64,
    /// Inclusive index range of the minimizing band.
    pub band: (usize, usize),
    /// min over bands of ‖Q_t^{1/2}1_B‖_ℋ / ‖e^{−·t}1_B‖_ℋ.
    pub ratio: f64,
    /// The sufficient r-mass bound 2Mε²/(e^{2Mt}−1) at the minimizing
    /// band's top node M (limit ε²/t at M = 0).
    pub mass_bound: f64,
    /// r-mass Σ_{i∈B} cᵢrᵢ of the minimizing band.
    pub band_r_mass: f64,
    pub achievable: bool,
    /// The indicator state of the minimizing band.
    pub y_eps: LiftState,
}

impl Serialize for WitnessReport {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("WitnessReport", 7)?;
        st.serialize_field("t", &self.t)?;
        st.serialize_field("epsilon", &self.epsilon)?;
        st.serialize_field("band", &[self.band.0, self.band.1])?;
        st.serialize_field("ratio", &self.ratio)?;
        st.serialize_field("mass_bound", &self.mass_bound)?;
        st.serialize_field("band_r_mass", &self.band_r_mass)?;
        st.serialize_field("achievable", &self.achievable)?;
        st.end()
    }
}

/// Search contiguous node bands B for the smallest ratio
/// ‖Q_t^{1/2}1_B‖_ℋ / ‖e^{−·t}1_B‖_ℋ, the quantity whose infimum over a
/// shrinking atomless band is zero. The numerator uses the self-adjoint
/// identity ‖Q_t^{1/2}y‖² = ⟨Q_t y, y⟩_ℋ, so no factorization enters the
/// scan; bands are extended incrementally, O(n³) pair terms total.
pub fn strong_feller_witness(
    dm: &Arc<DiscreteMeasure>,
    t: f64,
    epsilon: f64,
) -> Result<WitnessReport> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "witness time must be finite and > 0, got {t}"
        )));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "witness threshold must be finite and > 0, got {epsilon}"
        )));
    }
    let th = dm.nodes();
    let c = dm.weights();
    let r = dm.r_values();
    let n = dm.len();
    let w: Vec<f64> = (0..n).map(|i| c[i] * r[i]).collect();
    let e1: Vec<f64> = th.iter().map(|&x| (-x * t).exp()).collect();
    let g = |i: usize, j: usize| -> f64 {
        let s = th[i] + th[j];
        if s == 0.0 {
            t
        } else {
            (1.0 - e1[i] * e1[j]) / s
        }
    };

    let mut best_ratio2 = f64::INFINITY;
    let mut best_band = (0, 0);
    for i0 in 0..n {
        let mut num = 0.0;
        let mut den = 0.0;
        for i1 in i0..n {
            let mut cross = 0.0;
            for j in i0..i1 {
                cross += w[j] * g(j, i1);
            }
            num += 2.0 * w[i1] * cross + w[i1] * w[i1] * g(i1, i1);
            den += w[i1] * e1[i1] * e1[i1];
            let ratio2 = num / den;
            if ratio2 < best_ratio2 {
                best_ratio2 = ratio2;
                best_band = (i0, i1);
            }
        }
    }

    let (b0, b1) = best_band;
    let ratio = best_ratio2.sqrt();
    let m_top = th[b1];
    let mass_bound = if m_top == 0.0 {
        epsilon * epsilon / t
    } else {
        2.0 * m_top * epsilon * epsilon / ((2.0 * m_top * t).exp() - 1.0)
    };
    let band_r_mass: f64 = (b0..=b1).map(|i| w[i]).sum();
    let mut values = vec![0.0; n];
    for v in values.iter_mut().take(b1 + 1).skip(b0) {
        *v = 1.0;
    }
    let y_eps = LiftState::scalar(dm.clone(), values)?;
    Ok(WitnessReport {
        t,
        epsilon,
        band: best_band,
        ratio,
        mass_bound,
        band_r_mass,
        achievable: ratio < epsilon,
        y_eps,
    })
}
