//! Drift and diffusion coefficients b, σ of the observation process.
//!
//! Both act on the observation X = μ[Y] ∈ ℝⁿ, not on the lift coordinates:
//! b: ℝⁿ → ℝⁿ and σ: ℝⁿ → ℝ^{n×d}. Built-in families honor their declared
//! Lipschitz constants; custom functions are trusted to match theirs.

use std::fmt;
use std::sync::Arc;

use crate::{Error, Result};

/// User-supplied coefficient: writes the value at `x` into `out`.
pub type CoeffFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
enum Family {
    Zero,
    /// b = 0, σ ≡ sigma (scalar additive noise).
    Additive { sigma: f64 },
    /// b(x) = b0 + b1·x, σ(x) = s0 + s1·x (scalar).
    Affine { b0: f64, b1: f64, s0: f64, s1: f64 },
    /// b(x) = b0 + b1·x, σ(x) = s0 + s1·tanh(x) (scalar, bounded σ).
    BoundedSigma { b0: f64, b1: f64, s0: f64, s1: f64 },
    Custom {
        name: String,
        b: CoeffFn,
        sigma: CoeffFn,
    },
}

/// A coefficient pair with its declared analytic constants.
#[derive(Clone)]
pub struct Coefficients {
    family: Family,
    n: usize,
    d: usize,
    lipschitz_l: f64,
    sigma_sup: Option<f64>,
    sigma_inv_sup: Option<f64>,
}

impl Coefficients {
    /// b = 0, σ = 0 (deterministic decay).
    pub fn zero() -> Self {
        Self {
            family: Family::Zero,
            n: 1,
            d: 1,
            lipschitz_l: 0.0,
            sigma_sup: Some(0.0),
            sigma_inv_sup: None,
        }
    }

    /// b = 0, σ ≡ `sigma` (scalar additive noise).
    pub fn additive(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "additive σ must be finite, got {sigma}"
            )));
        }
        Ok(Self {
            family: Family::Additive { sigma },
            n: 1,
            d: 1,
            lipschitz_l: 0.0,
            sigma_sup: Some(sigma.abs()),
            sigma_inv_sup: (sigma != 0.0).then(|| 1.0 / sigma.abs()),
        })
    }

    /// Scalar affine pair b(x) = b0 + b1·x, σ(x) = s0 + s1·x.
    pub fn affine(b0: f64, b1: f64, s0: f64, s1: f64) -> Result<Self> {
        for v in [b0, b1, s0, s1] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "affine coefficients must be finite, got {v}"
                )));
            }
        }
        let bounded = s1 == 0.0;
        Ok(Self {
            family: Family::Affine { b0, b1, s0, s1 },
            n: 1,
            d: 1,
            lipschitz_l: b1.abs().max(s1.abs()),
            sigma_sup: bounded.then(|| s0.abs()),
            sigma_inv_sup: (bounded && s0 != 0.0).then(|| 1.0 / s0.abs()),
        })
    }

    /// Scalar pair with bounded, invertible diffusion:
    /// b(x) = b0 + b1·x, σ(x) = s0 + s1·tanh(x). Requires |s0| > |s1| so σ
    /// stays bounded away from zero.
    pub fn bounded_sigma(b0: f64, b1: f64, s0: f64, s1: f64) -> Result<Self> {
        for v in [b0, b1, s0, s1] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "coefficients must be finite, got {v}"
                )));
            }
        }
        if s0.abs() <= s1.abs() {
            return Err(Error::InvalidParameter(format!(
                "bounded σ needs |s0| > |s1| for invertibility, got s0={s0}, s1={s1}"
            )));
        }
        Ok(Self {
            family: Family::BoundedSigma { b0, b1, s0, s1 },
            n: 1,
            d: 1,
            lipschitz_l: b1.abs().max(s1.abs()),
            sigma_sup: Some(s0.abs() + s1.abs()),
            sigma_inv_sup: Some(1.0 / (s0.abs() - s1.abs())),
        })
    }

    /// User-supplied pair with declared Lipschitz constant. `b` writes an
    /// n-vector, `sigma` an n×d matrix in row-major order.
    pub fn custom(
        name: impl Into<String>,
        n: usize,
        d: usize,
        b: CoeffFn,
        sigma: CoeffFn,
        lipschitz_l: f64,
    ) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidParameter(
                "coefficient dimensions must be ≥ 1".into(),
            ));
        }
        if !(lipschitz_l.is_finite() && lipschitz_l >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Lipschitz constant must be finite and ≥ 0, got {lipschitz_l}"
            )));
        }
        Ok(Self {
            family: Family::Custom {
                name: name.into(),
                b,
                sigma,
            },
            n,
            d,
            lipschitz_l,
            sigma_sup: None,
            sigma_inv_sup: None,
        })
    }

    /// Override the declared σ bounds (for custom families).
    pub fn with_sigma_bounds(mut self, sup: Option<f64>, inv_sup: Option<f64>) -> Self {
        self.sigma_sup = sup;
        self.sigma_inv_sup = inv_sup;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lipschitz_l(&self) -> f64 {
        self.lipschitz_l
    }

    pub fn sigma_sup(&self) -> Option<f64> {
        self.sigma_sup
    }

    pub fn sigma_inv_sup(&self) -> Option<f64> {
        self.sigma_inv_sup
    }

    /// Evaluate b(x) into `out` (length n).
    pub fn eval_b(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        match &self.family {
            Family::Zero | Family::Additive { .. } => out.fill(0.0),
            Family::Affine { b0, b1, .. } | Family::BoundedSigma { b0, b1, .. } => {
                out[0] = b0 + b1 * x[0];
            }
            Family::Custom { b, .. } => b(x, out),
        }
    }

    /// Evaluate σ(x) into `out` (n×d, row-major).
    pub fn eval_sigma(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n * self.d);
        match &self.family {
            Family::Zero => out.fill(0.0),
            Family::Additive { sigma } => out[0] = *sigma,
            Family::Affine { s0, s1, .. } => out[0] = s0 + s1 * x[0],
            Family::BoundedSigma { s0, s1, .. } => out[0] = s0 + s1 * x[0].tanh(),
            Family::Custom { sigma, .. } => sigma(x, out),
        }
    }

    /// Scalar b(x); panics unless n = 1.
    pub fn b_scalar(&self, x: f64) -> f64 {
        assert_eq!(self.n, 1, "b_scalar needs a scalar family");
        let mut out = [0.0];
        self.eval_b(&[x], &mut out);
        out[0]
    }

    /// Scalar σ(x); panics unless n = d = 1.
    pub fn sigma_scalar(&self, x: f64) -> f64 {
        assert_eq!((self.n, self.d), (1, 1), "sigma_scalar needs a scalar family");
        let mut out = [0.0];
        self.eval_sigma(&[x], &mut out);
        out[0]
    }
}

impl fmt::Debug for Coefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match &self.family {
            Family::Zero => "zero".to_string(),
            Family::Additive { sigma } => format!("additive(σ={sigma})"),
            Family::Affine { b0, b1, s0, s1 } => {
                format!("affine(b={b0}+{b1}x, σ={s0}+{s1}x)")
            }
            Family::BoundedSigma { b0, b1, s0, s1 } => {
                format!("bounded(b={b0}+{b1}x, σ={s0}+{s1}tanh x)")
            }
            Family::Custom { name, .. } => format!("custom({name})"),
        };
        f.debug_struct("Coefficients")
            .field("family", &name)
            .field("n", &self.n)
            .field("d", &self.d)
            .field("lipschitz_l", &self.lipschitz_l)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_evaluates_and_declares_l() {
        let c = Coefficients::affine(1.0, -0.5, 2.0, 0.25).unwrap();
        assert_eq!(c.b_scalar(4.0), -1.0);
        assert_eq!(c.sigma_scalar(4.0), 3.0);
        assert_eq!(c.lipschitz_l(), 0.5);
        assert_eq!(c.sigma_sup(), None);
    }

    #[test]
    fn bounded_sigma_stays_in_band() {
        let c = Coefficients::bounded_sigma(0.0, -0.3, 5.0, 0.2).unwrap();
        for x in [-50.0, -1.0, 0.0, 1.0, 50.0] {
            let s = c.sigma_scalar(x);
            assert!((4.8..=5.2).contains(&s), "σ({x}) = {s}");
        }
        assert_eq!(c.sigma_sup(), Some(5.2));
        assert!((c.sigma_inv_sup().unwrap() - 1.0 / 4.8).abs() < 1e-15);
        assert!(Coefficients::bounded_sigma(0.0, 0.0, 0.2, 5.0).is_err());
    }

    #[test]
    fn declared_lipschitz_honored_by_families() {
        // |f(x)−f(y)| ≤ L|x−y| sampled on a grid for both b and σ.
        let cases = [
            Coefficients::affine(0.3, -0.7, 1.0, 0.4).unwrap(),
            Coefficients::bounded_sigma(0.1, -0.3, 5.0, 0.2).unwrap(),
        ];
        for c in &cases {
            let l = c.lipschitz_l();
            let xs: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.25).collect();
            for &x in &xs {
                for &y in &xs {
                    let db = (c.b_scalar(x) - c.b_scalar(y)).abs();
                    let ds = (c.sigma_scalar(x) - c.sigma_scalar(y)).abs();
                    let cap = l * (x - y).abs() + 1e-12;
                    assert!(db <= cap, "b gap {db} over {cap}");
                    assert!(ds <= cap, "σ gap {ds} over {cap}");
                }
            }
        }
    }

    #[test]
    fn custom_matrix_coefficients() {
        let b: CoeffFn = Arc::new(|x, out| {
            out[0] = -x[0];
            out[1] = -2.0 * x[1];
        });
        let sigma: CoeffFn = Arc::new(|_x, out| {
            out.copy_from_slice(&[1.0, 0.0, 0.5, 2.0, 0.0, 1.0]);
        });
        let c = Coefficients::custom("diag", 2, 3, b, sigma, 2.0).unwrap();
        let mut bv = [0.0; 2];
        c.eval_b(&[1.0, 1.0], &mut bv);
        assert_eq!(bv, [-1.0, -2.0]);
        let mut sv = [0.0; 6];
        c.eval_sigma(&[0.0, 0.0], &mut sv);
        assert_eq!(sv[3], 2.0);
    }
}
