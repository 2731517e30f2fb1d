//! Kernel variants, closed-form evaluation and Bernstein measures.

use super::weight::WeightFunction;
use crate::{Error, Result};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};
use statrs::function::gamma::gamma;

/// A completely monotone kernel in closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// K(t) = Σ_i c_i e^{−θ_i t} with distinct ascending nodes θ_i ≥ 0 and
    /// weights c_i > 0.
    ExponentialSum { nodes: Vec<f64>, weights: Vec<f64> },
    /// K(t) = t^{α−1}/Γ(α), α ∈ (1/2, 1). Singular at t = 0.
    Fractional { alpha: f64 },
    /// K(t) = e^{−βt} t^{α−1}/Γ(α), α ∈ (1/2, 1), β > 0. Singular at t = 0.
    Gamma { alpha: f64, beta: f64 },
    /// K(t) = K_base(t + δ), δ > 0. Always regular (the shift mollifies the
    /// singularity and damps the measure by e^{−δθ}).
    Shifted { base: Box<Kernel>, delta: f64 },
    /// K(t) = e^{−βt} K_base(t), β > 0. Shifts the Bernstein measure by +β.
    Damped { base: Box<Kernel>, beta: f64 },
}

/// Value of the Bernstein measure at a point: a density value for variants
/// with absolutely continuous μ, or the full atom list for discrete μ.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureValue {
    /// dμ/dθ evaluated at the query point.
    Density(f64),
    /// All atoms (θ_i, c_i), ascending in θ.
    Atoms(Vec<(f64, f64)>),
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.5 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (1/2, 1), got {alpha}"
        )));
    }
    Ok(())
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "{name} must be finite and > 0, got {x}"
        )));
    }
    Ok(())
}

impl Kernel {
    /// Exponential sum Σ c_i e^{−θ_i t}.
    ///
    /// Nodes are sorted ascending; exact duplicates are merged by summing
    /// their weights.
    ///
    /// # Errors
    /// Empty input, non-finite entries, negative nodes, non-positive weights
    /// or mismatched lengths are rejected.
    pub fn exponential_sum(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let (nodes, weights) = sort_merge_atoms(nodes, weights)?;
        Ok(Kernel::ExponentialSum { nodes, weights })
    }

    /// Fractional kernel t^{α−1}/Γ(α).
    pub fn fractional(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Kernel::Fractional { alpha })
    }

    /// Gamma kernel e^{−βt} t^{α−1}/Γ(α).
    pub fn gamma(alpha: f64, beta: f64) -> Result<Self> {
        check_alpha(alpha)?;
        check_positive("beta", beta)?;
        Ok(Kernel::Gamma { alpha, beta })
    }

    /// Shift K(·) ↦ K(· + δ).
    pub fn shifted(base: Kernel, delta: f64) -> Result<Self> {
        check_positive("delta", delta)?;
        Ok(Kernel::Shifted {
            base: Box::new(base),
            delta,
        })
    }

    /// Damp K(·) ↦ e^{−β·} K(·).
    pub fn damped(base: Kernel, beta: f64) -> Result<Self> {
        check_positive("beta", beta)?;
        Ok(Kernel::Damped {
            base: Box::new(base),
            beta,
        })
    }

    /// Evaluate K(t).
    ///
    /// # Errors
    /// t ≤ 0 (and NaN) is rejected: singular variants diverge there and the
    /// Bernstein integral is only guaranteed for t > 0.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel evaluation requires t > 0, got {t}"
            )));
        }
        Ok(self.eval_unchecked(t))
    }

    /// K(t) for t > 0, no argument validation (internal quadrature loops).
    pub(crate) fn eval_unchecked(&self, t: f64) -> f64 {
        match self {
            Kernel::ExponentialSum { nodes, weights } => nodes
                .iter()
                .zip(weights)
                .map(|(&th, &c)| c * (-th * t).exp())
                .sum(),
            Kernel::Fractional { alpha } => t.powf(alpha - 1.0) / gamma(*alpha),
            Kernel::Gamma { alpha, beta } => (-beta * t).exp() * t.powf(alpha - 1.0) / gamma(*alpha),
            Kernel::Shifted { base, delta } => base.eval_unchecked(t + delta),
            Kernel::Damped { base, beta } => (-beta * t).exp() * base.eval_unchecked(t),
        }
    }

    /// Whether K stays bounded as t ↓ 0 (equivalently, μ is finite).
    pub fn bounded_at_zero(&self) -> bool {
        match self {
            Kernel::ExponentialSum { .. } | Kernel::Shifted { .. } => true,
            Kernel::Fractional { .. } | Kernel::Gamma { .. } => false,
            Kernel::Damped { base, .. } => base.bounded_at_zero(),
        }
    }

    /// The Bernstein measure at θ: density value, or the atom list for
    /// discrete measures (the query point is then irrelevant).
    ///
    /// # Errors
    /// θ < 0 or NaN is rejected.
    pub fn bernstein_measure(&self, theta: f64) -> Result<MeasureValue> {
        if !(theta.is_finite() && theta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Bernstein measure queries require θ ≥ 0, got {theta}"
            )));
        }
        match self.atoms() {
            Some(atoms) => Ok(MeasureValue::Atoms(atoms)),
            None => Ok(MeasureValue::Density(self.density_value(theta))),
        }
    }

    /// Materialized atoms (θ_i, c_i) when μ is discrete: exponential sums and
    /// their Shifted/Damped wrappers. None for density variants.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            Kernel::ExponentialSum { nodes, weights } => Some(
                nodes
                    .iter()
                    .copied()
                    .zip(weights.iter().copied())
                    .collect(),
            ),
            Kernel::Fractional { .. } | Kernel::Gamma { .. } => None,
            Kernel::Shifted { base, delta } => base.atoms().map(|atoms| {
                atoms
                    .into_iter()
                    .map(|(th, c)| (th, c * (-delta * th).exp()))
                    .collect()
            }),
            Kernel::Damped { base, beta } => base
                .atoms()
                .map(|atoms| atoms.into_iter().map(|(th, c)| (th + beta, c)).collect()),
        }
    }

    /// Left edge of the support of μ.
    pub(crate) fn support_start(&self) -> f64 {
        match self {
            Kernel::ExponentialSum { nodes, .. } => nodes.first().copied().unwrap_or(0.0),
            Kernel::Fractional { .. } => 0.0,
            Kernel::Gamma { beta, .. } => *beta,
            Kernel::Shifted { base, .. } => base.support_start(),
            Kernel::Damped { base, beta } => base.support_start() + beta,
        }
    }

    /// Exponent α of the density singularity (θ − s₀)^{−α} at the support
    /// edge, for density variants.
    pub(crate) fn density_exponent(&self) -> Option<f64> {
        match self {
            Kernel::ExponentialSum { .. } => None,
            Kernel::Fractional { alpha } | Kernel::Gamma { alpha, .. } => Some(*alpha),
            Kernel::Shifted { base, .. } | Kernel::Damped { base, .. } => base.density_exponent(),
        }
    }

    /// Smooth factor g with density(θ) = g(θ)·(θ − s₀)^{−α} on (s₀, ∞).
    pub(crate) fn density_smooth_factor(&self, theta: f64) -> f64 {
        match self {
            Kernel::ExponentialSum { .. } => {
                unreachable!("atomic measures have no density decomposition")
            }
            Kernel::Fractional { alpha } | Kernel::Gamma { alpha, .. } => {
                // 1/(Γ(α)Γ(1−α)) = sin(πα)/π by the reflection identity.
                1.0 / (gamma(*alpha) * gamma(1.0 - *alpha))
            }
            Kernel::Shifted { base, delta } => {
                (-delta * theta).exp() * base.density_smooth_factor(theta)
            }
            Kernel::Damped { base, beta } => base.density_smooth_factor(theta - beta),
        }
    }

    /// dμ/dθ for density variants; zero outside the support.
    pub(crate) fn density_value(&self, theta: f64) -> f64 {
        let s0 = self.support_start();
        let alpha = self
            .density_exponent()
            .expect("density_value on an atomic kernel");
        if theta <= s0 {
            return 0.0;
        }
        self.density_smooth_factor(theta) * (theta - s0).powf(-alpha)
    }

    /// Whether μ([1, ∞)) < ∞, i.e. the constant weight r ≡ 1 is admissible.
    pub fn is_regular(&self) -> bool {
        match self {
            Kernel::ExponentialSum { .. } => true,
            Kernel::Fractional { .. } | Kernel::Gamma { .. } => false,
            // ∫_[1,∞) e^{−δθ} μ(dθ) ≤ e^{δ·0}·K(δ) < ∞ for any base.
            Kernel::Shifted { .. } => true,
            Kernel::Damped { base, .. } => base.is_regular(),
        }
    }

    /// Default weight: r ≡ 1 for regular kernels; otherwise the midpoint of
    /// the admissible exponent interval [2, 1/(1−α)), floored at 2.
    pub fn default_weight(&self) -> WeightFunction {
        if self.is_regular() {
            return WeightFunction::One;
        }
        let alpha = self
            .density_exponent()
            .expect("singular kernels carry a density exponent");
        let p = (2.0 + 1.0 / (1.0 - alpha)) / 2.0;
        WeightFunction::Power { p: p.max(2.0) }
    }

    /// Whether the lifted dynamics admit an invariant measure: μ({0}) = 0 and
    /// ∫ r(θ)/(2θ) μ(dθ) < ∞ (finite stationary trace).
    pub fn invariant_criterion(&self) -> bool {
        match self {
            Kernel::ExponentialSum { nodes, .. } => nodes.first().copied().unwrap_or(0.0) > 0.0,
            // ∫_0 θ^{−α−1} dθ diverges: infinite stationary trace.
            Kernel::Fractional { .. } => false,
            // Support starts at β > 0 and the r-weighted tail is integrable.
            Kernel::Gamma { .. } => true,
            // e^{−δθ} leaves the behaviour near θ = 0 unchanged.
            Kernel::Shifted { base, .. } => base.invariant_criterion(),
            // The +β shift moves all mass away from zero.
            Kernel::Damped { .. } => true,
        }
    }

    pub(crate) fn from_json_value(v: &Value) -> std::result::Result<Self, String> {
        let obj = v.as_object().ok_or("kernel must be a JSON object")?;
        let variant = obj
            .get("variant")
            .and_then(Value::as_str)
            .ok_or("kernel requires a string field 'variant'")?;
        let allowed: &[&str] = match variant {
            "exponential-sum" => &["variant", "nodes", "weights"],
            "fractional" => &["variant", "alpha"],
            "gamma" => &["variant", "alpha", "beta"],
            "shifted" => &["variant", "base", "delta"],
            "damped" => &["variant", "base", "beta"],
            other => return Err(format!("unknown kernel variant '{other}'")),
        };
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(format!(
                    "unknown field '{key}' in kernel variant '{variant}'"
                ));
            }
        }
        let num = |key: &str| -> std::result::Result<f64, String> {
            obj.get(key)
                .and_then(Value::as_f64)
                .ok_or_else(|| format!("kernel variant '{variant}' requires numeric field '{key}'"))
        };
        let vec = |key: &str| -> std::result::Result<Vec<f64>, String> {
            obj.get(key)
                .and_then(Value::as_array)
                .ok_or_else(|| format!("kernel variant '{variant}' requires array field '{key}'"))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| format!("non-numeric entry in '{key}'")))
                .collect()
        };
        let kernel = match variant {
            "exponential-sum" => Kernel::exponential_sum(vec("nodes")?, vec("weights")?),
            "fractional" => Kernel::fractional(num("alpha")?),
            "gamma" => Kernel::gamma(num("alpha")?, num("beta")?),
            "shifted" => {
                let base = Kernel::from_json_value(obj.get("base").ok_or("shifted requires 'base'")?)?;
                Kernel::shifted(base, num("delta")?)
            }
            "damped" => {
                let base = Kernel::from_json_value(obj.get("base").ok_or("damped requires 'base'")?)?;
                Kernel::damped(base, num("beta")?)
            }
            _ => unreachable!(),
        };
        kernel.map_err(|e| e.to_string())
    }

    pub(crate) fn to_json_value(&self) -> Value {
        match self {
            Kernel::ExponentialSum { nodes, weights } => json!({
                "variant": "exponential-sum",
                "nodes": nodes,
                "weights": weights,
            }),
            Kernel::Fractional { alpha } => json!({
                "variant": "fractional",
                "alpha": alpha,
            }),
            Kernel::Gamma { alpha, beta } => json!({
                "variant": "gamma",
                "alpha": alpha,
                "beta": beta,
            }),
            Kernel::Shifted { base, delta } => json!({
                "variant": "shifted",
                "base": base.to_json_value(),
                "delta": delta,
            }),
            Kernel::Damped { base, beta } => json!({
                "variant": "damped",
                "base": base.to_json_value(),
                "beta": beta,
            }),
        }
    }
}

impl Serialize for Kernel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json_value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Kernel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        Kernel::from_json_value(&value).map_err(D::Error::custom)
    }
}

pub(crate) fn sort_merge_atoms(
    nodes: Vec<f64>,
    weights: Vec<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if nodes.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one atom is required".into(),
        ));
    }
    if nodes.len() != weights.len() {
        return Err(Error::InvalidParameter(format!(
            "nodes and weights must have equal length ({} vs {})",
            nodes.len(),
            weights.len()
        )));
    }
    for &th in &nodes {
        if !(th.is_finite() && th >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "nodes must be finite and ≥ 0, got {th}"
            )));
        }
    }
    for &c in &weights {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "weights must be finite and > 0, got {c}"
            )));
        }
    }
    let mut atoms: Vec<(f64, f64)> = nodes.into_iter().zip(weights).collect();
    atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite nodes"));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (th, c) in atoms {
        match merged.last_mut() {
            Some(last) if last.0 == th => last.1 += c,
            _ => merged.push((th, c)),
        }
    }
    Ok(merged.into_iter().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expsum() -> Kernel {
        Kernel::exponential_sum(vec![2.0, 0.5], vec![1.0, 3.0]).unwrap()
    }

    #[test]
    fn exponential_sum_sorts_and_merges() {
        let k = Kernel::exponential_sum(vec![2.0, 0.5, 2.0], vec![1.0, 3.0, 0.25]).unwrap();
        match &k {
            Kernel::ExponentialSum { nodes, weights } => {
                assert_eq!(nodes, &vec![0.5, 2.0]);
                assert_eq!(weights, &vec![3.0, 1.25]);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn eval_rejects_nonpositive_time() {
        assert!(expsum().eval(0.0).is_err());
        assert!(expsum().eval(-1.0).is_err());
        assert!(expsum().eval(f64::NAN).is_err());
    }

    #[test]
    fn eval_matches_closed_forms() {
        let t = 0.7f64;
        let k = expsum();
        let want = 1.0 * (-2.0 * t).exp() + 3.0 * (-0.5 * t).exp();
        assert!((k.eval(t).unwrap() - want).abs() < 1e-15);

        let frac = Kernel::fractional(0.75).unwrap();
        let want = t.powf(-0.25) / gamma(0.75);
        assert!((frac.eval(t).unwrap() - want).abs() < 1e-15);

        let gam = Kernel::gamma(0.7, 1.5).unwrap();
        let want = (-1.5 * t).exp() * t.powf(-0.3) / gamma(0.7);
        assert!((gam.eval(t).unwrap() - want).abs() < 1e-15);

        let shifted = Kernel::shifted(frac.clone(), 0.2).unwrap();
        assert_eq!(shifted.eval(t).unwrap(), frac.eval(t + 0.2).unwrap());

        let damped = Kernel::damped(frac.clone(), 0.9).unwrap();
        assert!(
            (damped.eval(t).unwrap() - (-0.9 * t).exp() * frac.eval(t).unwrap()).abs() < 1e-16
        );
    }

    #[test]
    fn fractional_density_matches_reflection_constant() {
        // dμ/dθ = θ^{−α} sin(πα)/π.
        let alpha = 0.75;
        let k = Kernel::fractional(alpha).unwrap();
        let theta = 2.3;
        match k.bernstein_measure(theta).unwrap() {
            MeasureValue::Density(d) => {
                let want = theta.powf(-alpha) * (std::f64::consts::PI * alpha).sin()
                    / std::f64::consts::PI;
                assert!((d - want).abs() < 1e-14, "d={d}, want={want}");
            }
            MeasureValue::Atoms(_) => panic!("fractional has a density"),
        }
    }

    #[test]
    fn gamma_density_vanishes_below_beta() {
        let k = Kernel::gamma(0.7, 1.0).unwrap();
        match k.bernstein_measure(0.5).unwrap() {
            MeasureValue::Density(d) => assert_eq!(d, 0.0),
            _ => panic!(),
        }
        match k.bernstein_measure(1.8).unwrap() {
            MeasureValue::Density(d) => {
                let want = 0.8f64.powf(-0.7) / (gamma(0.7) * gamma(0.3));
                assert!((d - want).abs() < 1e-14);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn shifted_applies_exact_exponential_factor_to_atoms() {
        let k = Kernel::shifted(expsum(), 0.3).unwrap();
        match k.bernstein_measure(0.0).unwrap() {
            MeasureValue::Atoms(atoms) => {
                assert_eq!(atoms.len(), 2);
                assert_eq!(atoms[0], (0.5, 3.0 * (-0.3f64 * 0.5).exp()));
                assert_eq!(atoms[1], (2.0, 1.0 * (-0.3f64 * 2.0).exp()));
            }
            _ => panic!("shifted exponential sum stays atomic"),
        }
    }

    #[test]
    fn damped_shifts_atom_positions() {
        let k = Kernel::damped(expsum(), 0.4).unwrap();
        match k.bernstein_measure(0.0).unwrap() {
            MeasureValue::Atoms(atoms) => {
                assert_eq!(atoms, vec![(0.9, 3.0), (2.4, 1.0)]);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn damped_fractional_equals_gamma_density() {
        let alpha = 0.8;
        let beta = 1.3;
        let damped = Kernel::damped(Kernel::fractional(alpha).unwrap(), beta).unwrap();
        let gamma_k = Kernel::gamma(alpha, beta).unwrap();
        for theta in [1.31, 2.0, 7.5] {
            let d1 = match damped.bernstein_measure(theta).unwrap() {
                MeasureValue::Density(d) => d,
                _ => panic!(),
            };
            let d2 = match gamma_k.bernstein_measure(theta).unwrap() {
                MeasureValue::Density(d) => d,
                _ => panic!(),
            };
            assert!((d1 - d2).abs() < 1e-14 * d2.abs().max(1.0));
        }
    }

    #[test]
    fn regularity_follows_the_measure_tail() {
        assert!(expsum().is_regular());
        assert!(!Kernel::fractional(0.6).unwrap().is_regular());
        assert!(!Kernel::gamma(0.7, 1.0).unwrap().is_regular());
        let shifted_frac = Kernel::shifted(Kernel::fractional(0.6).unwrap(), 0.1).unwrap();
        assert!(shifted_frac.is_regular());
        let damped_frac = Kernel::damped(Kernel::fractional(0.6).unwrap(), 1.0).unwrap();
        assert!(!damped_frac.is_regular());
        let damped_sum = Kernel::damped(expsum(), 1.0).unwrap();
        assert!(damped_sum.is_regular());
    }

    #[test]
    fn default_weight_uses_the_midpoint_exponent() {
        fn exponent(w: WeightFunction) -> f64 {
            match w {
                WeightFunction::Power { p } => p,
                WeightFunction::One => panic!("expected a power weight"),
            }
        }
        // α = 0.8: admissible interval [2, 5), midpoint 3.5.
        let k = Kernel::fractional(0.8).unwrap();
        assert!((exponent(k.default_weight()) - 3.5).abs() < 1e-12);
        // α = 0.6: interval [2, 2.5), midpoint 2.25.
        let k = Kernel::fractional(0.6).unwrap();
        assert!((exponent(k.default_weight()) - 2.25).abs() < 1e-12);
        // Regular kernels need no decay.
        assert!(expsum().default_weight().is_one());
        assert!(Kernel::shifted(Kernel::fractional(0.8).unwrap(), 1.0)
            .unwrap()
            .default_weight()
            .is_one());
        // Damped singular kernels inherit the base exponent.
        let k = Kernel::damped(Kernel::fractional(0.8).unwrap(), 2.0).unwrap();
        assert!((exponent(k.default_weight()) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn invariant_criterion_per_variant() {
        assert!(!Kernel::fractional(0.75).unwrap().invariant_criterion());
        assert!(Kernel::gamma(0.7, 1.0).unwrap().invariant_criterion());
        assert!(expsum().invariant_criterion());
        let with_zero = Kernel::exponential_sum(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert!(!with_zero.invariant_criterion());
        assert!(!Kernel::shifted(with_zero.clone(), 0.5)
            .unwrap()
            .invariant_criterion());
        assert!(Kernel::damped(with_zero, 0.5).unwrap().invariant_criterion());
        assert!(!Kernel::shifted(Kernel::fractional(0.75).unwrap(), 0.5)
            .unwrap()
            .invariant_criterion());
    }

    #[test]
    fn json_round_trip_is_value_exact() {
        let kernels = [
            expsum(),
            Kernel::fractional(0.7500000000000002).unwrap(),
            Kernel::gamma(0.7, 1.0 + 1e-15).unwrap(),
            Kernel::shifted(Kernel::gamma(0.61, 0.31).unwrap(), 0.123456789012345e-3).unwrap(),
            Kernel::damped(expsum(), std::f64::consts::PI).unwrap(),
        ];
        for k in kernels {
            let text = serde_json::to_string(&k).unwrap();
            let back: Kernel = serde_json::from_str(&text).unwrap();
            assert_eq!(back, k, "round trip changed {text}");
        }
    }

    #[test]
    fn json_rejects_unknown_fields_and_bad_variants() {
        let bad: std::result::Result<Kernel, _> =
            serde_json::from_str(r#"{"variant":"fractional","alpha":0.75,"beta":1.0}"#);
        assert!(bad.unwrap_err().to_string().contains("beta"));
        let bad: std::result::Result<Kernel, _> =
            serde_json::from_str(r#"{"variant":"power-law","alpha":0.75}"#);
        assert!(bad.is_err());
        let bad: std::result::Result<Kernel, _> =
            serde_json::from_str(r#"{"variant":"fractional","alpha":0.4}"#);
        assert!(bad.unwrap_err().to_string().contains("(1/2, 1)"));
    }
}
