//! Picard iteration of the mild-solution map and its contraction
//! diagnostics.
//!
//! Along one fixed Brownian path, the map Φ sends a candidate path Y to the
//! stepped solution whose coefficients are frozen along Y. Its fixed point
//! is the scheme solution, and consecutive iterates are compared in the
//! discounted energy norm
//!
//! ```text
//! ‖Y‖²_{T,λ,κ} = sup_k e^{−λt_k}‖Y_k‖²_ℋ + Σ_k e^{−λt_k}(κ‖Y_k‖²_ℋ + ‖Y_k‖²_𝒱) dt,
//! ```
//!
//! a single-path surrogate of the norm in which the map contracts in
//! expectation. The constants take κ = 2L²(M+1)(5+8c²)·∫r dμ with the
//! Burkholder constant fixed at c = 2 and M chosen through the ε–M device
//! at ε = 1/(2L²(5+8c²)∫r dμ), then λ = 3 + 2κ; only the contraction trend
//! is asserted, the constants are not unique.

use super::coeffs::Coefficients;
use super::engine::{Scheme, SimConfig, SimPath};
use crate::kernels::DiscreteMeasure;
use crate::liftspace::{eps_m_constant, LiftState};
use crate::rng::PathRng;
use crate::{Error, Result};

/// 5 + 8c² with c = 2.
const BDG_FACTOR: f64 = 37.0;

/// Convergence diagnostics of a Picard run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PicardReport {
    pub lambda: f64,
    pub kappa: f64,
    /// ‖Y^{k+1} − Y^k‖_{T,λ,κ} for k = 0, 1, …
    pub iterate_gaps: Vec<f64>,
    /// gaps[k+1]/gaps[k]; 0 once the gap has vanished.
    pub contraction_ratios: Vec<f64>,
    /// sup_k ‖Φ(Y)_k − Y_k‖_ℋ of the final iterate.
    pub fixed_point_residual: f64,
    pub converged: bool,
}

/// The discount and energy constants (λ, κ) for a measure and Lipschitz
/// constant. L = 0 gives (3, 0).
pub fn picard_constants(dm: &DiscreteMeasure, lipschitz_l: f64) -> Result<(f64, f64)> {
    if !(lipschitz_l.is_finite() && lipschitz_l >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Lipschitz constant must be finite and ≥ 0, got {lipschitz_l}"
        )));
    }
    if lipschitz_l == 0.0 {
        return Ok((3.0, 0.0));
    }
    let scale = 2.0 * lipschitz_l * lipschitz_l * BDG_FACTOR * dm.mass_r();
    let eps_star = 1.0 / scale;
    let (_m, cap_m) = eps_m_constant(dm, eps_star)?;
    let kappa = scale * (cap_m + 1.0);
    Ok((3.0 + 2.0 * kappa, kappa))
}

fn weighted_gap(a: &[LiftState], b: &[LiftState], dt: f64, lambda: f64, kappa: f64) -> f64 {
    let steps = a.len() - 1;
    let mut sup = 0.0f64;
    let mut int = 0.0f64;
    for k in 0..=steps {
        let diff = a[k].sub(&b[k]).expect("iterates share one measure");
        let n = diff.norms();
        let disc = (-lambda * k as f64 * dt).exp();
        sup = sup.max(disc * n.h * n.h);
        if k < steps {
            int += disc * (kappa * n.h * n.h + n.v * n.v) * dt;
        }
    }
    (sup + int).sqrt()
}

struct Phi<'a> {
    coeffs: &'a Coefficients,
    y0: &'a LiftState,
    dw: &'a [Vec<f64>],
    dt: f64,
    scheme: Scheme,
}

impl Phi<'_> {
    /// Apply the mild-solution map with coefficients frozen along `x_prev`.
    fn apply(&self, x_prev: &[Vec<f64>]) -> Result<Vec<LiftState>> {
        let steps = self.dw.len();
        let n = self.coeffs.n();
        let d = self.coeffs.d();
        let dm = self.y0.measure();
        let nodes = dm.nodes();
        let (a, b_fac, c_fac): (Vec<f64>, Vec<f64>, Vec<f64>) = match self.scheme {
            Scheme::ExactOuEuler => {
                let e: Vec<f64> = nodes.iter().map(|&th| (-th * self.dt).exp()).collect();
                let bf = nodes
                    .iter()
                    .zip(&e)
                    .map(|(&th, &ei)| if th == 0.0 { self.dt } else { (1.0 - ei) / th })
                    .collect();
                (e.clone(), bf, e)
            }
            Scheme::FullEuler => (
                nodes.iter().map(|&th| 1.0 - th * self.dt).collect(),
                vec![self.dt; nodes.len()],
                vec![1.0; nodes.len()],
            ),
        };
        let mut states = Vec::with_capacity(steps + 1);
        states.push(self.y0.clone());
        let mut b_val = vec![0.0; n];
        let mut sigma_val = vec![0.0; n * d];
        let mut sdw = vec![0.0; n];
        for k in 0..steps {
            self.coeffs.eval_b(&x_prev[k], &mut b_val);
            self.coeffs.eval_sigma(&x_prev[k], &mut sigma_val);
            for (c, s) in sdw.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, &wj) in self.dw[k].iter().enumerate() {
                    acc += sigma_val[c * d + j] * wj;
                }
                *s = acc;
            }
            let prev = &states[k];
            let mut next = prev.clone();
            for (i, block) in next.values_mut().chunks_exact_mut(n).enumerate() {
                for c in 0..n {
                    block[c] = a[i] * block[c] + b_fac[i] * b_val[c] + c_fac[i] * sdw[c];
                }
            }
            for &v in next.values() {
                if !v.is_finite() || v.abs() > 1e300 {
                    return Err(Error::PathBlowUp { path: 0, step: k });
                }
            }
            states.push(next);
        }
        Ok(states)
    }
}

fn observations(states: &[LiftState]) -> Vec<Vec<f64>> {
    states.iter().map(LiftState::mu_integral).collect()
}

/// Iterate Φ from Y⁰ ≡ 0 along one Brownian path (index 0 of the seed) and
/// report gaps, ratios, and the terminal fixed-point residual.
///
/// # Errors
/// `n_iter` < 2, invalid tolerance or grid, or a blown-up iterate.
/// Non-convergence is flagged in the report, not an error.
pub fn picard_solve(
    coeffs: &Coefficients,
    y0: &LiftState,
    cfg: &SimConfig,
    n_iter: usize,
    tol: f64,
) -> Result<(SimPath, PicardReport)> {
    if n_iter < 2 {
        return Err(Error::InvalidParameter(format!(
            "picard iteration needs n_iter ≥ 2, got {n_iter}"
        )));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be finite and > 0, got {tol}"
        )));
    }
    let steps = cfg.steps()?;
    let d = coeffs.d();
    let (lambda, kappa) = picard_constants(y0.measure(), coeffs.lipschitz_l())?;

    let rng = PathRng::new(cfg.seed, d);
    let sqrt_dt = cfg.dt.sqrt();
    let mut z = vec![0.0; d];
    let mut dw = Vec::with_capacity(steps);
    for k in 0..steps {
        rng.fill_step_normals(0, k, &mut z);
        dw.push(z.iter().map(|&v| sqrt_dt * v).collect::<Vec<f64>>());
    }
    let phi = Phi {
        coeffs,
        y0,
        dw: &dw,
        dt: cfg.dt,
        scheme: cfg.scheme,
    };

    let zero = LiftState::zero(y0.measure().clone(), y0.dim())?;
    let mut states: Vec<LiftState> = vec![zero; steps + 1];
    let mut x_along = observations(&states);
    let mut gaps = Vec::with_capacity(n_iter);
    for _ in 0..n_iter {
        let next = phi.apply(&x_along)?;
        gaps.push(weighted_gap(&next, &states, cfg.dt, lambda, kappa));
        states = next;
        x_along = observations(&states);
    }
    let ratios: Vec<f64> = gaps
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect();

    let reapplied = phi.apply(&x_along)?;
    let mut residual = 0.0f64;
    for (a, b) in reapplied.iter().zip(&states) {
        residual = residual.max(a.sub(b)?.norm_h());
    }
    let report = PicardReport {
        lambda,
        kappa,
        iterate_gaps: gaps,
        contraction_ratios: ratios,
        fixed_point_residual: residual,
        converged: residual <= tol,
    };
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * cfg.dt).collect();
    let path = SimPath {
        times,
        x: x_along,
        lift: states,
        dw,
    };
    Ok((path, report))
}

/// sup_k ‖Φ(Y)_k − Y_k‖_ℋ for an already simulated path: zero to roundoff
/// when the path came from the same stepping rule.
pub fn fixed_point_residual(
    coeffs: &Coefficients,
    path: &SimPath,
    cfg: &SimConfig,
) -> Result<f64> {
    let steps = cfg.steps()?;
    if path.dw.len() != steps || path.lift.len() != steps + 1 {
        return Err(Error::GridMismatch(format!(
            "path has {} steps, config expects {steps}",
            path.dw.len()
        )));
    }
    let phi = Phi {
        coeffs,
        y0: &path.lift[0],
        dw: &path.dw,
        dt: cfg.dt,
        scheme: cfg.scheme,
    };
    let reapplied = phi.apply(&path.x)?;
    let mut residual = 0.0f64;
    for (a, b) in reapplied.iter().zip(&path.lift) {
        residual = residual.max(a.sub(b)?.norm_h());
    }
    Ok(residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::engine::simulate_lift;
    use crate::kernels::WeightFunction;
    use std::sync::Arc;

    fn measure() -> Arc<DiscreteMeasure> {
        Arc::new(
            DiscreteMeasure::new(
                vec![0.0, 1.0, 4.0],
                vec![0.5, 1.0, 2.0],
                WeightFunction::One,
            )
            .unwrap(),
        )
    }

    fn cfg() -> SimConfig {
        SimConfig {
            t_horizon: 1.0,
            dt: 0.01,
            n_paths: 1,
            seed: 5,
            scheme: Scheme::ExactOuEuler,
        }
    }

    #[test]
    fn lipschitz_free_case_converges_in_one_pass() {
        let y0 = LiftState::scalar(measure(), vec![1.0, -1.0, 0.5]).unwrap();
        let (_, report) = picard_solve(&Coefficients::zero(), &y0, &cfg(), 4, 1e-12).unwrap();
        assert_eq!(report.kappa, 0.0);
        assert_eq!(report.lambda, 3.0);
        assert!(report.iterate_gaps[0] > 0.0);
        assert_eq!(report.iterate_gaps[1], 0.0);
        assert!(report.converged);
        assert_eq!(report.fixed_point_residual, 0.0);
    }

    #[test]
    fn affine_case_contracts_and_matches_simulate_lift() {
        let y0 = LiftState::scalar(measure(), vec![0.2, 0.4, -0.1]).unwrap();
        let coeffs = Coefficients::affine(0.1, -0.5, 0.5, 0.2).unwrap();
        let c = cfg();
        let (path, report) = picard_solve(&coeffs, &y0, &c, 12, 1e-8).unwrap();
        assert!(report.converged, "residual {}", report.fixed_point_residual);
        assert!(
            report.contraction_ratios.iter().skip(2).all(|&r| r < 0.9),
            "{:?}",
            report.contraction_ratios
        );
        let reference = simulate_lift(&coeffs, &y0, &c).unwrap();
        let gap: f64 = path
            .x
            .iter()
            .zip(&reference.x)
            .map(|(a, b)| (a[0] - b[0]).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-8, "picard limit differs from stepping by {gap}");
    }

    #[test]
    fn simulate_lift_output_is_a_fixed_point() {
        let y0 = LiftState::scalar(measure(), vec![0.2, 0.4, -0.1]).unwrap();
        let coeffs = Coefficients::affine(0.1, -0.5, 0.5, 0.2).unwrap();
        let c = cfg();
        let path = simulate_lift(&coeffs, &y0, &c).unwrap();
        let residual = fixed_point_residual(&coeffs, &path, &c).unwrap();
        assert!(residual < 1e-10, "residual {residual}");
    }

    #[test]
    fn small_iteration_budget_rejected() {
        let y0 = LiftState::scalar(measure(), vec![0.0, 0.0, 0.0]).unwrap();
        assert!(picard_solve(&Coefficients::zero(), &y0, &cfg(), 1, 1e-8).is_err());
    }

    #[test]
    fn constants_grow_with_lipschitz() {
        let dm = measure();
        let (l0, k0) = picard_constants(&dm, 0.0).unwrap();
        let (l1, k1) = picard_constants(&dm, 0.5).unwrap();
        let (l2, k2) = picard_constants(&dm, 2.0).unwrap();
        assert_eq!((l0, k0), (3.0, 0.0));
        assert!(k1 > 0.0 && l1 == 3.0 + 2.0 * k1);
        assert!(k2 > k1 && l2 > l1);
    }
}
