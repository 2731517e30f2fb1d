//! Finite discrete Bernstein measures μ = Σ_i c_i δ_{θ_i} with a weight r.

use super::kernel::sort_merge_atoms;
use super::weight::WeightFunction;
use crate::{sha256_hex, Error, Result};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};

/// A discrete Bernstein measure with cached weight values.
///
/// Nodes are distinct, ascending and ≥ 0; weights are > 0. The struct caches
/// r(θ_i) and the weighted mass Σ c_i r(θ_i), plus a SHA-256 digest of the
/// canonical JSON form used to detect mismatched measures across states.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    weight_fn: WeightFunction,
    r: Vec<f64>,
    mass_r: f64,
    digest: String,
}

impl PartialEq for DiscreteMeasure {
    fn eq(&self, other: &Self) -> bool {
        self.digest == other.digest
    }
}

impl DiscreteMeasure {
    /// Build a measure from raw atoms and a weight function.
    ///
    /// Nodes are sorted ascending; exact duplicates are merged by summing
    /// weights.
    ///
    /// # Errors
    /// Empty input, non-finite entries, negative nodes, non-positive weights
    /// or mismatched lengths are rejected.
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>, weight_fn: WeightFunction) -> Result<Self> {
        let (nodes, weights) = sort_merge_atoms(nodes, weights)?;
        let r: Vec<f64> = nodes.iter().map(|&th| weight_fn.eval(th)).collect();
        let mass_r: f64 = weights.iter().zip(&r).map(|(c, ri)| c * ri).sum();
        if !mass_r.is_finite() {
            return Err(Error::InvalidParameter(
                "weighted mass Σ c_i r(θ_i) is not finite".into(),
            ));
        }
        let digest = sha256_hex(
            serde_json::to_string(&json!({
                "nodes": &nodes,
                "weights": &weights,
                "weight_p": weight_fn.to_weight_p(),
            }))
            .expect("measure JSON is always serializable")
            .as_bytes(),
        );
        Ok(DiscreteMeasure {
            nodes,
            weights,
            weight_fn,
            r,
            mass_r,
            digest,
        })
    }

    /// Atoms of an exponential-sum style list with a weight.
    pub fn from_atoms(atoms: &[(f64, f64)], weight_fn: WeightFunction) -> Result<Self> {
        let (nodes, weights): (Vec<f64>, Vec<f64>) = atoms.iter().copied().unzip();
        DiscreteMeasure::new(nodes, weights, weight_fn)
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True when the measure has no atoms (never constructible; kept for API
    /// completeness).
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes θ_i, ascending.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Weights c_i > 0, aligned with [`Self::nodes`].
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Cached weight values r(θ_i).
    pub fn r_values(&self) -> &[f64] {
        &self.r
    }

    /// The weight function r.
    pub fn weight_fn(&self) -> WeightFunction {
        self.weight_fn
    }

    /// Weighted mass Σ c_i r(θ_i) = μ_r([0, ∞)).
    pub fn mass_r(&self) -> f64 {
        self.mass_r
    }

    /// Smallest node β = θ_0: the exponential decay rate of the reconstructed
    /// kernel K̄(t) = Σ c_i e^{−θ_i t} ~ c_0 e^{−βt} for large t.
    pub fn exp_decay_rate(&self) -> f64 {
        self.nodes[0]
    }

    /// Whether a zero node is present.
    pub fn has_zero_node(&self) -> bool {
        self.nodes[0] == 0.0
    }

    /// Invariant-measure criterion for the discrete lift: the stationary
    /// covariance exists iff no node sits at θ = 0 (the trace Σ c_i r_i/(2θ_i)
    /// is automatically finite for a finite measure).
    pub fn invariant_criterion(&self) -> bool {
        !self.has_zero_node()
    }

    /// Reconstructed kernel K̄(t) = Σ c_i e^{−θ_i t}, finite for all t ≥ 0.
    pub fn kernel_value(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&th, &c)| c * (-th * t).exp())
            .sum()
    }

    /// SHA-256 digest of the canonical JSON form; equal digests mean equal
    /// measures.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub(crate) fn check_same(&self, other: &DiscreteMeasure) -> Result<()> {
        if self.digest == other.digest {
            Ok(())
        } else {
            Err(Error::MismatchedMeasure(
                self.digest[..12].to_string(),
                other.digest[..12].to_string(),
            ))
        }
    }
}

impl Serialize for DiscreteMeasure {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        json!({
            "nodes": &self.nodes,
            "weights": &self.weights,
            "weight_p": self.weight_fn.to_weight_p(),
        })
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DiscreteMeasure {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        let obj = value
            .as_object()
            .ok_or_else(|| D::Error::custom("discrete measure must be a JSON object"))?;
        for key in obj.keys() {
            if !["nodes", "weights", "weight_p"].contains(&key.as_str()) {
                return Err(D::Error::custom(format!(
                    "unknown field '{key}' in discrete measure"
                )));
            }
        }
        let vec = |key: &str| -> std::result::Result<Vec<f64>, D::Error> {
            obj.get(key)
                .and_then(Value::as_array)
                .ok_or_else(|| D::Error::custom(format!("measure requires array field '{key}'")))?
                .iter()
                .map(|x| {
                    x.as_f64()
                        .ok_or_else(|| D::Error::custom(format!("non-numeric entry in '{key}'")))
                })
                .collect()
        };
        let weight_p = match obj.get("weight_p") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                v.as_f64()
                    .ok_or_else(|| D::Error::custom("weight_p must be numeric or null"))?,
            ),
        };
        let weight_fn = WeightFunction::from_weight_p(weight_p).map_err(D::Error::custom)?;
        DiscreteMeasure::new(vec("nodes")?, vec("weights")?, weight_fn).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measure() -> DiscreteMeasure {
        DiscreteMeasure::new(
            vec![0.0, 4.0, 1.0],
            vec![0.5, 2.0, 1.0],
            WeightFunction::power(2.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn construction_sorts_and_caches_weights() {
        let dm = measure();
        assert_eq!(dm.nodes(), &[0.0, 1.0, 4.0]);
        assert_eq!(dm.weights(), &[0.5, 1.0, 2.0]);
        assert_eq!(dm.r_values(), &[1.0, 1.0, 0.5]);
        assert!((dm.mass_r() - (0.5 + 1.0 + 1.0)).abs() < 1e-15);
        assert_eq!(dm.exp_decay_rate(), 0.0);
        assert!(!dm.invariant_criterion());
    }

    #[test]
    fn duplicate_nodes_merge_by_summing_weights() {
        let dm = DiscreteMeasure::new(
            vec![1.0, 1.0, 2.0],
            vec![0.25, 0.75, 1.0],
            WeightFunction::One,
        )
        .unwrap();
        assert_eq!(dm.nodes(), &[1.0, 2.0]);
        assert_eq!(dm.weights(), &[1.0, 1.0]);
    }

    #[test]
    fn rejects_invalid_atoms() {
        assert!(DiscreteMeasure::new(vec![], vec![], WeightFunction::One).is_err());
        assert!(DiscreteMeasure::new(vec![-1.0], vec![1.0], WeightFunction::One).is_err());
        assert!(DiscreteMeasure::new(vec![1.0], vec![0.0], WeightFunction::One).is_err());
        assert!(DiscreteMeasure::new(vec![1.0, 2.0], vec![1.0], WeightFunction::One).is_err());
        assert!(DiscreteMeasure::new(vec![f64::INFINITY], vec![1.0], WeightFunction::One).is_err());
    }

    #[test]
    fn kernel_value_matches_direct_sum() {
        let dm = measure();
        let t = 0.37f64;
        let want = 0.5 + 1.0 * (-t).exp() + 2.0 * (-4.0 * t).exp();
        assert!((dm.kernel_value(t) - want).abs() < 1e-15);
    }

    #[test]
    fn digest_distinguishes_weights_and_measures() {
        let a = measure();
        let b = DiscreteMeasure::new(
            vec![0.0, 4.0, 1.0],
            vec![0.5, 2.0, 1.0],
            WeightFunction::One,
        )
        .unwrap();
        assert_ne!(a.digest(), b.digest());
        assert!(a.check_same(&a.clone()).is_ok());
        assert!(a.check_same(&b).is_err());
    }

    #[test]
    fn json_round_trip_is_value_exact() {
        let dm = DiscreteMeasure::new(
            vec![0.1 + 1e-16, 3.0, 17.25],
            vec![1.0 / 3.0, 2.0 / 7.0, 5.0e-13],
            WeightFunction::power(2.25).unwrap(),
        )
        .unwrap();
        let text = serde_json::to_string(&dm).unwrap();
        let back: DiscreteMeasure = serde_json::from_str(&text).unwrap();
        assert_eq!(back.nodes(), dm.nodes());
        assert_eq!(back.weights(), dm.weights());
        assert_eq!(back.weight_fn(), dm.weight_fn());
        assert_eq!(back.digest(), dm.digest());

        let constant: DiscreteMeasure =
            serde_json::from_str(r#"{"nodes":[1.0],"weights":[2.0],"weight_p":null}"#).unwrap();
        assert!(constant.weight_fn().is_one());
    }

    #[test]
    fn json_rejects_unknown_fields() {
        let bad: std::result::Result<DiscreteMeasure, _> =
            serde_json::from_str(r#"{"nodes":[1.0],"weights":[2.0],"weight_q":3.0}"#);
        assert!(bad.unwrap_err().to_string().contains("weight_q"));
    }
}
