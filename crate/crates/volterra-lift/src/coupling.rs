//! Asymptotic coupling of two lifted solutions and the log-Harnack bound.
//!
//! Two copies of the scalar lifted equation are driven by the same
//! Brownian increments. The second copy carries the control drift
//!
//! ```text
//! +λ σ(μ[Ȳ]) σ^{−1}(μ[Y]) Σ cᵢ r(m∨θᵢ)(Yᵢ − Ȳᵢ),
//! ```
//!
//! which pulls it toward the first at rate β = min θ in the weighted
//! seminorm Σ r(m∨θ)c|·|². The Girsanov weight R of the control is a
//! mean-one martingale, its relative entropy is bounded by
//! ½‖σ^{−1}‖²_∞ λ ‖y−ȳ‖²_ℋ, and the reweighted distance decays like
//! r(m)^{−1/2} e^{−βt/2} ‖y−ȳ‖_ℋ. Together these give the asymptotic
//! log-Harnack inequality
//!
//! ```text
//! P_t log f(ȳ) ≤ log P_t f(y) + ½‖σ^{−1}‖²_∞ λ ‖y−ȳ‖²_ℋ
//!               + r(m)^{−1/2} e^{−βt/2} ‖y−ȳ‖_ℋ ‖∇log f‖_∞,
//! ```
//!
//! which this module checks by Monte Carlo: both semigroup averages run
//! the plain dynamics, the coupling only justifies the constants. All
//! checks are one-sided; nothing here asserts the bounds are tight.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{Coefficients, SimConfig};
use crate::kernels::DiscreteMeasure;
use crate::liftspace::LiftState;
use crate::rng::PathRng;
use crate::{Error, Result};

use crate::dynamics::engine::{record_indices, run_path, Stepper};

/// Effective sample sizes below this flag importance weights as degenerate.
pub const ESS_FLOOR: f64 = 100.0;

/// Constants of the coupling construction for one measure and one
/// coefficient pair.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CouplingConfig {
    /// Lipschitz constant L of b and σ.
    pub l: f64,
    /// ‖σ^{−1}‖_∞.
    pub sigma_inv_sup: f64,
    /// ‖σ‖_∞.
    pub sigma_sup: f64,
    /// Tail cut m ≥ 1 with 2L²(1+mass_r)·Σ_{θᵢ≥m} cᵢrᵢ ≤ 1.
    pub m: f64,
    /// λ = 1 + 2L²(1+mass_r)·r(m)^{−2}.
    pub lambda: f64,
    /// β = min node, the decay rate of the coupled distance.
    pub beta: f64,
    /// Ξ = 2λ − 1 − 2L²(1+mass_r)·r(m)^{−2}, equal to λ by construction.
    pub xi: f64,
}

fn tail_r_mass(dm: &DiscreteMeasure, m: f64) -> f64 {
    dm.nodes()
        .iter()
        .zip(dm.weights())
        .zip(dm.r_values())
        .filter(|((&th, _), _)| th >= m)
        .map(|((_, &c), &r)| c * r)
        .sum()
}

/// Smallest m ≥ 1 with 2L²(1+mass_r)·Σ_{θᵢ≥m} cᵢrᵢ ≤ 1. The tail sum is
/// piecewise constant with jumps at the nodes, so the scan over
/// {1} ∪ {θᵢ} ∪ {next_up(θᵢ)} is exact.
pub fn compute_m(dm: &DiscreteMeasure, l: f64) -> f64 {
    if l == 0.0 {
        return 1.0;
    }
    let budget = 1.0 / (2.0 * l * l * (1.0 + dm.mass_r()));
    let mut candidates = vec![1.0f64];
    for &th in dm.nodes() {
        if th >= 1.0 {
            candidates.push(th);
            candidates.push(th.next_up());
        }
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();
    for m in candidates {
        if tail_r_mass(dm, m) <= budget * (1.0 + 1e-12) {
            return m;
        }
    }
    dm.nodes().last().unwrap().next_up().max(1.0)
}

/// λ = 1 + 2L²(1+mass_r)·r(m)^{−2}.
pub fn compute_lambda(dm: &DiscreteMeasure, l: f64, m: f64) -> f64 {
    let r_m = dm.weight_fn().eval(m);
    1.0 + 2.0 * l * l * (1.0 + dm.mass_r()) / (r_m * r_m)
}

/// Ξ = 2λ − 1 − 2L²(1+mass_r)·r(m)^{−2}.
pub fn compute_xi(dm: &DiscreteMeasure, l: f64, m: f64, lambda: f64) -> f64 {
    let r_m = dm.weight_fn().eval(m);
    2.0 * lambda - 1.0 - 2.0 * l * l * (1.0 + dm.mass_r()) / (r_m * r_m)
}

impl CouplingConfig {
    /// Derive all constants with the smallest admissible m.
    pub fn derive(dm: &DiscreteMeasure, coeffs: &Coefficients) -> Result<Self> {
        let m = compute_m(dm, coeffs.lipschitz_l());
        Self::derive_with_m(dm, coeffs, m)
    }

    /// Derive the constants at a caller-chosen admissible m ≥ 1.
    pub fn derive_with_m(dm: &DiscreteMeasure, coeffs: &Coefficients, m: f64) -> Result<Self> {
        if !(m.is_finite() && m >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "coupling cut must be finite and ≥ 1, got {m}"
            )));
        }
        let l = coeffs.lipschitz_l();
        let budget = if l == 0.0 {
            f64::INFINITY
        } else {
            1.0 / (2.0 * l * l * (1.0 + dm.mass_r()))
        };
        if tail_r_mass(dm, m) > budget * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "m = {m} is not admissible: 2L²(1+mass_r)·tail(m) exceeds 1"
            )));
        }
        let sigma_inv_sup = coeffs.sigma_inv_sup().ok_or_else(|| {
            Error::MissingSigmaInverse(
                "the coupling control needs a bounded right inverse of σ; use a \
                 coefficient family that declares one"
                    .into(),
            )
        })?;
        let sigma_sup = coeffs.sigma_sup().ok_or_else(|| {
            Error::InvalidParameter(
                "the coupling constants need a finite ‖σ‖_∞; use a coefficient \
                 family that declares one"
                    .into(),
            )
        })?;
        let lambda = compute_lambda(dm, l, m);
        let xi = compute_xi(dm, l, m, lambda);
        Ok(Self {
            l,
            sigma_inv_sup,
            sigma_sup,
            m,
            lambda,
            beta: dm.exp_decay_rate(),
            xi,
        })
    }

    /// ½‖σ^{−1}‖²_∞ λ d₀², the entropy budget for initial distance d₀.
    pub fn entropy_bound(&self, initial_distance: f64) -> f64 {
        0.5 * self.sigma_inv_sup * self.sigma_inv_sup * self.lambda * initial_distance.powi(2)
    }

    /// r(m)^{−1/2} e^{−βt/2} d₀, the reweighted distance budget at time t.
    pub fn decay_bound(&self, dm: &DiscreteMeasure, t: f64, initial_distance: f64) -> f64 {
        let r_m = dm.weight_fn().eval(self.m);
        initial_distance * (-0.5 * self.beta * t).exp() / r_m.sqrt()
    }
}

fn require_scalar_pair(
    coeffs: &Coefficients,
    y: &LiftState,
    ybar: &LiftState,
) -> Result<Arc<DiscreteMeasure>> {
    if coeffs.n() != 1 || coeffs.d() != 1 {
        return Err(Error::InvalidParameter(format!(
            "the coupling is implemented for scalar observations, got n = {}, d = {}",
            coeffs.n(),
            coeffs.d()
        )));
    }
    for s in [y, ybar] {
        if s.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: s.dim(),
            });
        }
    }
    y.measure().check_same(ybar.measure())?;
    Ok(y.measure().clone())
}

/// λ σ^{−1}(μ[Y]) Σ cᵢ r(m∨θᵢ)(Yᵢ − Ȳᵢ), evaluated at the current pair.
pub fn control_drift(
    y: &LiftState,
    ybar: &LiftState,
    cfg: &CouplingConfig,
    coeffs: &Coefficients,
) -> Result<f64> {
    let dm = require_scalar_pair(coeffs, y, ybar)?;
    let x = y.mu_scalar()?;
    let sig = coeffs.sigma_scalar(x);
    if !sig.is_finite() || sig == 0.0 {
        return Err(Error::MissingSigmaInverse(format!(
            "σ({x}) = {sig} cannot be inverted"
        )));
    }
    let wf = dm.weight_fn();
    let mut s = 0.0;
    for ((&th, &c), (yv, bv)) in dm
        .nodes()
        .iter()
        .zip(dm.weights())
        .zip(y.values().iter().zip(ybar.values()))
    {
        s += c * wf.eval(cfg.m.max(th)) * (yv - bv);
    }
    Ok(cfg.lambda * s / sig)
}

fn norm_h_from(values: &[f64], dm: &DiscreteMeasure) -> f64 {
    values
        .iter()
        .zip(dm.weights())
        .zip(dm.r_values())
        .map(|((&v, &c), &r)| c * r * v * v)
        .sum::<f64>()
        .sqrt()
}

/// Step the coupled pair along one path. `visit` sees every grid index
/// with the running log-weight and the control about to be applied;
/// returns whether the path hit the truncation cap.
fn run_coupled_path<F: FnMut(usize, f64, f64, &[f64], &[f64])>(
    coeffs: &Coefficients,
    y: &LiftState,
    ybar: &LiftState,
    cfg: &CouplingConfig,
    sim: &SimConfig,
    cap: f64,
    path: u64,
    mut visit: F,
) -> Result<bool> {
    let dm = require_scalar_pair(coeffs, y, ybar)?;
    let steps = sim.steps()?;
    let stepper = Stepper::new(&dm, sim.scheme, sim.dt);
    let rng = PathRng::new(sim.seed, 1);
    let sqrt_dt = sim.dt.sqrt();
    let wf = dm.weight_fn();
    let weights = dm.weights();
    let rt: Vec<f64> = dm.nodes().iter().map(|&th| wf.eval(cfg.m.max(th))).collect();

    let mut yv = y.values().to_vec();
    let mut bv = ybar.values().to_vec();
    if norm_h_from(&yv, &dm) > cap || norm_h_from(&bv, &dm) > cap {
        return Ok(true);
    }
    let mut log_r = 0.0;
    let mut z = [0.0f64; 1];
    for k in 0..=steps {
        let mut x = 0.0;
        let mut xbar = 0.0;
        let mut s = 0.0;
        for i in 0..yv.len() {
            x += weights[i] * yv[i];
            xbar += weights[i] * bv[i];
            s += weights[i] * rt[i] * (yv[i] - bv[i]);
        }
        let sig = coeffs.sigma_scalar(x);
        if !sig.is_finite() || sig == 0.0 {
            return Err(Error::MissingSigmaInverse(format!(
                "σ({x}) = {sig} cannot be inverted at step {k}"
            )));
        }
        let v = cfg.lambda * s / sig;
        visit(k, log_r, v, &yv, &bv);
        if k == steps {
            break;
        }
        rng.fill_step_normals(path, k, &mut z);
        let dw = sqrt_dt * z[0];
        let sigbar = coeffs.sigma_scalar(xbar);
        stepper.advance(&mut yv, 1, &[coeffs.b_scalar(x)], &[sig * dw]);
        stepper.advance(
            &mut bv,
            1,
            &[coeffs.b_scalar(xbar) + sigbar * v],
            &[sigbar * dw],
        );
        log_r += -v * dw - 0.5 * v * v * sim.dt;
        let ny = norm_h_from(&yv, &dm);
        let nb = norm_h_from(&bv, &dm);
        if !(ny.is_finite() && nb.is_finite()) || ny > cap || nb > cap || !log_r.is_finite() {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Full record of one coupled path.
#[derive(Debug, Clone)]
pub struct CouplingRun {
    pub times: Vec<f64>,
    pub y_path: Vec<LiftState>,
    pub ybar_path: Vec<LiftState>,
    /// Control applied on each step, one per visited grid point.
    pub v: Vec<f64>,
    /// Running log Girsanov weight, zero at time zero.
    pub log_r: Vec<f64>,
    /// e^{βt}‖Y−Ȳ‖²_ℋ per grid point.
    pub weighted_dist_h2: Vec<f64>,
    /// e^{βt} Σ r(m∨θ)cᵢ|Yᵢ−Ȳᵢ|² per grid point, the seminorm the
    /// control contracts.
    pub tilted_dist2: Vec<f64>,
    pub flagged: bool,
}

/// Default truncation cap 10⁶·max(‖y‖_ℋ, ‖ȳ‖_ℋ, 1).
fn default_cap(y: &LiftState, ybar: &LiftState) -> f64 {
    1e6 * y.norm_h().max(ybar.norm_h()).max(1.0)
}

/// Run a single coupled path and keep everything.
pub fn simulate_coupled_run(
    coeffs: &Coefficients,
    y: &LiftState,
    ybar: &LiftState,
    cfg: &CouplingConfig,
    sim: &SimConfig,
    path: u64,
    cap: Option<f64>,
) -> Result<CouplingRun> {
    let dm = require_scalar_pair(coeffs, y, ybar)?;
    let cap = cap.unwrap_or_else(|| default_cap(y, ybar));
    let wf = dm.weight_fn();
    let rt: Vec<f64> = dm.nodes().iter().map(|&th| wf.eval(cfg.m.max(th))).collect();
    let mut run = CouplingRun {
        times: Vec::new(),
        y_path: Vec::new(),
        ybar_path: Vec::new(),
        v: Vec::new(),
        log_r: Vec::new(),
        weighted_dist_h2: Vec::new(),
        tilted_dist2: Vec::new(),
        flagged: false,
    };
    let mut err = None;
    run.flagged = run_coupled_path(coeffs, y, ybar, cfg, sim, cap, path, |k, lr, v, yv, bv| {
        let t = k as f64 * sim.dt;
        run.times.push(t);
        match (
            LiftState::scalar(dm.clone(), yv.to_vec()),
            LiftState::scalar(dm.clone(), bv.to_vec()),
        ) {
            (Ok(a), Ok(b)) => {
                run.y_path.push(a);
                run.ybar_path.push(b);
            }
            (Err(e), _) | (_, Err(e)) => err = Some(e),
        }
        run.v.push(v);
        run.log_r.push(lr);
        let tilt = (cfg.beta * t).exp();
        let mut h2 = 0.0;
        let mut t2 = 0.0;
        for (i, ((&c, &r), &rti)) in dm
            .weights()
            .iter()
            .zip(dm.r_values())
            .zip(&rt)
            .enumerate()
        {
            let d = yv[i] - bv[i];
            h2 += c * r * d * d;
            t2 += c * rti * d * d;
        }
        run.weighted_dist_h2.push(tilt * h2);
        run.tilted_dist2.push(tilt * t2);
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(run)
}

/// Importance-weighted ensemble of coupled paths at fixed record times.
/// Flagged paths are dropped from the columns and listed.
#[derive(Debug, Clone)]
pub struct CouplingEnsemble {
    pub times: Vec<f64>,
    pub n_paths: u64,
    /// log R at each record time, one column per surviving path.
    pub log_r: Vec<Vec<f64>>,
    /// ‖Y−Ȳ‖_ℋ at each record time, aligned with `log_r`.
    pub dist_h: Vec<Vec<f64>>,
    pub flagged: Vec<u64>,
    pub config: CouplingConfig,
    pub initial_distance: f64,
}

/// Run the coupled ensemble. Paths are independent ChaCha streams, so
/// the result is bit-identical for any thread count.
pub fn simulate_coupled(
    coeffs: &Coefficients,
    y: &LiftState,
    ybar: &LiftState,
    cfg: &CouplingConfig,
    sim: &SimConfig,
    record_times: &[f64],
    cap: Option<f64>,
) -> Result<CouplingEnsemble> {
    let dm = require_scalar_pair(coeffs, y, ybar)?;
    let steps = sim.steps()?;
    let rec = record_indices(record_times, sim.dt, steps)?;
    let cap = cap.unwrap_or_else(|| default_cap(y, ybar));
    let n_paths = sim.n_paths as usize;
    let stride = 1 + 2 * rec.len();

    let mut slots = vec![0.0f64; n_paths * stride];
    slots
        .par_chunks_mut(stride)
        .enumerate()
        .try_for_each(|(p, slot)| -> Result<()> {
            let path = p as u64;
            let flagged =
                run_coupled_path(coeffs, y, ybar, cfg, sim, cap, path, |k, lr, _v, yv, bv| {
                    for (slot_pos, &rk) in rec.iter().enumerate() {
                        if rk == k {
                            let mut h2 = 0.0;
                            for (i, (&c, &r)) in
                                dm.weights().iter().zip(dm.r_values()).enumerate()
                            {
                                let d = yv[i] - bv[i];
                                h2 += c * r * d * d;
                            }
                            slot[1 + 2 * slot_pos] = lr;
                            slot[2 + 2 * slot_pos] = h2.sqrt();
                        }
                    }
                })?;
            slot[0] = if flagged { 1.0 } else { 0.0 };
            Ok(())
        })?;

    let mut log_r = vec![Vec::new(); rec.len()];
    let mut dist_h = vec![Vec::new(); rec.len()];
    let mut flagged = Vec::new();
    for p in 0..n_paths {
        let slot = &slots[p * stride..(p + 1) * stride];
        if slot[0] != 0.0 {
            flagged.push(p as u64);
            continue;
        }
        for slot_pos in 0..rec.len() {
            log_r[slot_pos].push(slot[1 + 2 * slot_pos]);
            dist_h[slot_pos].push(slot[2 + 2 * slot_pos]);
        }
    }
    Ok(CouplingEnsemble {
        times: record_times.to_vec(),
        n_paths: sim.n_paths,
        log_r,
        dist_h,
        flagged,
        config: *cfg,
        initial_distance: y.sub(ybar)?.norm_h(),
    })
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

fn ess(weights: &[f64]) -> f64 {
    let sum: f64 = weights.iter().sum();
    let sum2: f64 = weights.iter().map(|w| w * w).sum();
    if sum2 == 0.0 {
        0.0
    } else {
        sum * sum / sum2
    }
}

fn ensure_surviving(ens: &CouplingEnsemble) -> Result<()> {
    if ens.log_r.first().map_or(0, Vec::len) == 0 {
        return Err(Error::InvalidParameter(
            "every coupled path hit the truncation cap; no estimate is possible".into(),
        ));
    }
    Ok(())
}

/// Martingale diagnostics of the Girsanov weights.
#[derive(Debug, Clone, Serialize)]
pub struct WeightDiagnostics {
    pub times: Vec<f64>,
    /// MC mean of R per time; the martingale property makes it 1.
    pub weight_mean: Vec<f64>,
    pub weight_se: Vec<f64>,
    pub ess: Vec<f64>,
    pub degenerate: bool,
}

pub fn weight_diagnostics(ens: &CouplingEnsemble) -> Result<WeightDiagnostics> {
    ensure_surviving(ens)?;
    let mut weight_mean = Vec::new();
    let mut weight_se = Vec::new();
    let mut ess_t = Vec::new();
    for col in &ens.log_r {
        let weights: Vec<f64> = col.iter().map(|&lr| lr.exp()).collect();
        let (m, se) = mean_and_se(&weights);
        weight_mean.push(m);
        weight_se.push(se);
        ess_t.push(ess(&weights));
    }
    let degenerate = ess_t.iter().any(|&e| e < ESS_FLOOR);
    Ok(WeightDiagnostics {
        times: ens.times.clone(),
        weight_mean,
        weight_se,
        ess: ess_t,
        degenerate,
    })
}

/// E[R_t log R_t] per record time against the constant entropy budget.
#[derive(Debug, Clone, Serialize)]
pub struct EntropyReport {
    pub times: Vec<f64>,
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    /// ½‖σ^{−1}‖²_∞ λ ‖y−ȳ‖²_ℋ, uniform in t.
    pub bound: f64,
    pub ess: Vec<f64>,
    pub degenerate: bool,
}

pub fn entropy_estimate(ens: &CouplingEnsemble) -> Result<EntropyReport> {
    ensure_surviving(ens)?;
    let bound = ens.config.entropy_bound(ens.initial_distance);
    let mut estimate = Vec::new();
    let mut stderr = Vec::new();
    let mut ess_t = Vec::new();
    for col in &ens.log_r {
        let rlogr: Vec<f64> = col.iter().map(|&lr| lr.exp() * lr).collect();
        let (m, se) = mean_and_se(&rlogr);
        estimate.push(m);
        stderr.push(se);
        ess_t.push(ess(&col.iter().map(|&lr| lr.exp()).collect::<Vec<_>>()));
    }
    let degenerate = ess_t.iter().any(|&e| e < ESS_FLOOR);
    Ok(EntropyReport {
        times: ens.times.clone(),
        estimate,
        stderr,
        bound,
        ess: ess_t,
        degenerate,
    })
}

/// Reweighted mean distance per record time against the decay budget.
#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub times: Vec<f64>,
    /// Self-normalized weighted mean Σ R‖D‖ / Σ R.
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    /// r(m)^{−1/2} e^{−βt/2} ‖y−ȳ‖_ℋ per time.
    pub bound: Vec<f64>,
    pub ess: Vec<f64>,
    pub degenerate: bool,
}

pub fn decay_estimate(ens: &CouplingEnsemble, dm: &DiscreteMeasure) -> Result<DecayReport> {
    ensure_surviving(ens)?;
    let mut estimate = Vec::new();
    let mut stderr = Vec::new();
    let mut bound = Vec::new();
    let mut ess_t = Vec::new();
    for (col_lr, (col_d, &t)) in ens
        .log_r
        .iter()
        .zip(ens.dist_h.iter().zip(&ens.times))
    {
        let weights: Vec<f64> = col_lr.iter().map(|&lr| lr.exp()).collect();
        let w_sum: f64 = weights.iter().sum();
        let est = weights
            .iter()
            .zip(col_d)
            .map(|(w, d)| w * d)
            .sum::<f64>()
            / w_sum;
        let se = weights
            .iter()
            .zip(col_d)
            .map(|(w, d)| (w * (d - est)).powi(2))
            .sum::<f64>()
            .sqrt()
            / w_sum;
        estimate.push(est);
        stderr.push(se);
        bound.push(ens.config.decay_bound(dm, t, ens.initial_distance));
        ess_t.push(ess(&weights));
    }
    let degenerate = ess_t.iter().any(|&e| e < ESS_FLOOR);
    Ok(DecayReport {
        times: ens.times.clone(),
        estimate,
        stderr,
        bound,
        ess: ess_t,
        degenerate,
    })
}

/// Least-squares slope of ln(values) against times over [t_lo, t_hi].
pub fn fitted_log_slope(times: &[f64], values: &[f64], t_lo: f64, t_hi: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(&t, &v)| t >= t_lo && t <= t_hi && v > 0.0)
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "slope fit needs at least two positive samples in [{t_lo}, {t_hi}], got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let lm = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|(t, l)| (t - tm) * (l - lm)).sum();
    let den: f64 = pts.iter().map(|(t, _)| (t - tm) * (t - tm)).sum();
    if den == 0.0 {
        return Err(Error::InvalidParameter(
            "slope fit needs at least two distinct times".into(),
        ));
    }
    Ok(num / den)
}

/// Observable families f ≥ 1 with a known bound on ‖∇ log f‖_ℋ.
#[derive(Clone)]
pub enum HarnackFunction {
    /// f ≡ 1.
    One,
    /// f(y) = 1 + min(‖y − z‖_ℋ, cap).
    DistCap { z: LiftState, cap: f64 },
    /// f(y) = 1 + exp(⟨a, y⟩_ℋ clamped to [−clip, clip]).
    ExpInner { a: LiftState, clip: f64 },
    /// User observable with a declared gradient bound.
    Custom {
        name: String,
        f: Arc<dyn Fn(&LiftState) -> f64 + Send + Sync>,
        grad_log_sup: f64,
    },
}

impl fmt::Debug for HarnackFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HarnackFunction({})", self.id())
    }
}

impl HarnackFunction {
    pub fn dist_cap(z: LiftState, cap: f64) -> Result<Self> {
        if !(cap.is_finite() && cap > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "distance cap must be finite and > 0, got {cap}"
            )));
        }
        Ok(Self::DistCap { z, cap })
    }

    pub fn exp_inner(a: LiftState, clip: f64) -> Result<Self> {
        if !(clip.is_finite() && clip >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "clip must be finite and ≥ 0, got {clip}"
            )));
        }
        Ok(Self::ExpInner { a, clip })
    }

    /// A user observable is accepted only with a finite ‖∇ log f‖ bound.
    pub fn custom(
        name: impl Into<String>,
        f: Arc<dyn Fn(&LiftState) -> f64 + Send + Sync>,
        grad_log_sup: f64,
    ) -> Result<Self> {
        if !(grad_log_sup.is_finite() && grad_log_sup >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "‖∇ log f‖ must be finite and ≥ 0, got {grad_log_sup}"
            )));
        }
        Ok(Self::Custom {
            name: name.into(),
            f,
            grad_log_sup,
        })
    }

    pub fn id(&self) -> String {
        match self {
            Self::One => "one".into(),
            Self::DistCap { cap, .. } => format!("dist-cap({cap})"),
            Self::ExpInner { clip, .. } => format!("exp-inner({clip})"),
            Self::Custom { name, .. } => name.clone(),
        }
    }

    pub fn grad_log_sup(&self) -> f64 {
        match self {
            Self::One => 0.0,
            Self::DistCap { .. } => 1.0,
            Self::ExpInner { a, .. } => a.norm_h(),
            Self::Custom { grad_log_sup, .. } => *grad_log_sup,
        }
    }

    fn validate(&self, dm: &DiscreteMeasure) -> Result<()> {
        match self {
            Self::DistCap { z, .. } => dm.check_same(z.measure()),
            Self::ExpInner { a, .. } => dm.check_same(a.measure()),
            _ => Ok(()),
        }
    }

    /// Evaluate f at a state. The state must live on the measure the
    /// observable was built against; `harnack_check` validates this once
    /// per ensemble.
    pub fn eval(&self, state: &LiftState) -> f64 {
        match self {
            Self::One => 1.0,
            Self::DistCap { z, cap } => {
                let dm = state.measure();
                let mut h2 = 0.0;
                for (i, (&c, &r)) in dm.weights().iter().zip(dm.r_values()).enumerate() {
                    let d = state.values()[i] - z.values()[i];
                    h2 += c * r * d * d;
                }
                1.0 + h2.sqrt().min(*cap)
            }
            Self::ExpInner { a, clip } => {
                let dm = state.measure();
                let mut ip = 0.0;
                for (i, (&c, &r)) in dm.weights().iter().zip(dm.r_values()).enumerate() {
                    ip += c * r * a.values()[i] * state.values()[i];
                }
                1.0 + ip.clamp(-clip, *clip).exp()
            }
            Self::Custom { f, .. } => f(state),
        }
    }
}

/// One line of the log-Harnack verification.
#[derive(Debug, Clone, Serialize)]
pub struct HarnackReport {
    pub t: f64,
    pub f_id: String,
    /// MC estimate of P_t log f(ȳ).
    pub lhs: f64,
    pub lhs_se: f64,
    /// log P_t f(y) plus the entropy and decay terms.
    pub rhs: f64,
    pub rhs_se: f64,
    /// (rhs − lhs) in units of the combined standard error.
    pub margin_sigmas: f64,
    pub quadratic_term: f64,
    pub decay_term: f64,
    pub holds: bool,
}

/// Check the asymptotic log-Harnack inequality at the record times by
/// plain Monte Carlo on both sides. The two ensembles reuse the same
/// driving noise per path index, so the y = ȳ case reduces to a
/// sample-exact Jensen inequality and the standard error of the margin
/// accounts for the correlation.
pub fn harnack_check(
    family: &[HarnackFunction],
    y: &LiftState,
    ybar: &LiftState,
    cfg: &CouplingConfig,
    coeffs: &Coefficients,
    sim: &SimConfig,
    record_times: &[f64],
) -> Result<Vec<HarnackReport>> {
    let dm = require_scalar_pair(coeffs, y, ybar)?;
    if family.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one observable is required".into(),
        ));
    }
    for f in family {
        f.validate(&dm)?;
    }
    let steps = sim.steps()?;
    let rec = record_indices(record_times, sim.dt, steps)?;
    let n_paths = sim.n_paths as usize;
    let n_f = family.len();
    let stride = rec.len() * n_f;

    let collect = |start: &LiftState| -> Result<Vec<f64>> {
        let mut slots = vec![0.0f64; n_paths * stride];
        slots
            .par_chunks_mut(stride)
            .enumerate()
            .try_for_each(|(p, slot)| -> Result<()> {
                run_path(coeffs, start, sim, p as u64, None, |k, state, _x| {
                    for (slot_pos, &rk) in rec.iter().enumerate() {
                        if rk == k {
                            for (fi, f) in family.iter().enumerate() {
                                slot[slot_pos * n_f + fi] = f.eval(state);
                            }
                        }
                    }
                })
            })?;
        Ok(slots)
    };
    let f_at_y = collect(y)?;
    let f_at_ybar = collect(ybar)?;
    for (slots, start) in [(&f_at_y, "y"), (&f_at_ybar, "ȳ")] {
        if let Some(bad) = slots.iter().find(|&&v| !(v >= 1.0 - 1e-9)) {
            return Err(Error::InvalidParameter(format!(
                "observable dipped to {bad} < 1 on the {start} ensemble"
            )));
        }
    }

    let d0 = y.sub(ybar)?.norm_h();
    let quad = cfg.entropy_bound(d0);
    let mut reports = Vec::with_capacity(stride);
    for (slot_pos, &t) in record_times.iter().enumerate() {
        for (fi, f) in family.iter().enumerate() {
            let a: Vec<f64> = (0..n_paths)
                .map(|p| f_at_y[p * stride + slot_pos * n_f + fi])
                .collect();
            let b: Vec<f64> = (0..n_paths)
                .map(|p| f_at_ybar[p * stride + slot_pos * n_f + fi].ln())
                .collect();
            let (a_mean, a_se) = mean_and_se(&a);
            let (b_mean, b_se) = mean_and_se(&b);
            let nf = n_paths as f64;
            let cov_ab = a
                .iter()
                .zip(&b)
                .map(|(ai, bi)| (ai - a_mean) * (bi - b_mean))
                .sum::<f64>()
                / (nf - 1.0).max(1.0);
            let decay_term = cfg.decay_bound(&dm, t, d0) * f.grad_log_sup();
            let lhs = b_mean;
            let lhs_se = b_se;
            let rhs = a_mean.ln() + quad + decay_term;
            let rhs_se = a_se / a_mean;
            let var_diff =
                (rhs_se * rhs_se + lhs_se * lhs_se - 2.0 * cov_ab / (nf * a_mean)).max(0.0);
            let combined = var_diff.sqrt();
            let margin_sigmas = if combined == 0.0 {
                f64::INFINITY
            } else {
                (rhs - lhs) / combined
            };
            reports.push(HarnackReport {
                t,
                f_id: f.id(),
                lhs,
                lhs_se,
                rhs,
                rhs_se,
                margin_sigmas,
                quadratic_term: quad,
                decay_term,
                holds: lhs <= rhs + 3.0 * combined,
            });
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Scheme;
    use crate::kernels::WeightFunction;

    fn two_node(weight: WeightFunction) -> Arc<DiscreteMeasure> {
        Arc::new(DiscreteMeasure::new(vec![0.5, 2.0], vec![0.6, 0.4], weight).unwrap())
    }

    fn unit_start(dm: &Arc<DiscreteMeasure>) -> (LiftState, LiftState) {
        let c0 = dm.weights()[0] * dm.r_values()[0];
        let mut values = vec![0.0; dm.len()];
        values[0] = (1.0 / c0).sqrt();
        let y = LiftState::scalar(dm.clone(), values).unwrap();
        let ybar = LiftState::zero(dm.clone(), 1).unwrap();
        (y, ybar)
    }

    fn small_sim(n_paths: u64, seed: u64) -> SimConfig {
        SimConfig {
            t_horizon: 1.0,
            dt: 0.005,
            n_paths,
            seed,
            scheme: Scheme::ExactOuEuler,
        }
    }

    #[test]
    fn zero_lipschitz_gives_unit_constants() {
        let dm = two_node(WeightFunction::One);
        let coeffs = Coefficients::additive(1.0).unwrap();
        let cfg = CouplingConfig::derive(&dm, &coeffs).unwrap();
        assert_eq!(cfg.m, 1.0);
        assert_eq!(cfg.lambda, 1.0);
        assert_eq!(cfg.xi, 1.0);
        assert_eq!(cfg.beta, 0.5);
    }

    #[test]
    fn lambda_closed_form_unit_mass() {
        let dm = Arc::new(
            DiscreteMeasure::new(vec![1.0], vec![1.0], WeightFunction::One).unwrap(),
        );
        assert_eq!(compute_lambda(&dm, 1.0, 1.0), 5.0);
    }

    #[test]
    fn xi_equals_lambda_to_one_ulp() {
        let dm = two_node(WeightFunction::power(2.0).unwrap());
        for l in [0.0, 0.3, 0.9, 2.5] {
            let m = compute_m(&dm, l);
            let lambda = compute_lambda(&dm, l, m);
            let xi = compute_xi(&dm, l, m, lambda);
            assert!((xi - lambda).abs() <= lambda * f64::EPSILON, "L = {l}");
        }
    }

    #[test]
    fn m_scan_steps_past_a_violating_top_node() {
        let dm = Arc::new(
            DiscreteMeasure::new(vec![0.5, 10.0], vec![0.5, 0.5], WeightFunction::One).unwrap(),
        );
        let l = 1.0;
        let budget = 1.0 / (2.0 * l * l * (1.0 + dm.mass_r()));
        assert!(tail_r_mass(&dm, 1.0) > budget);
        assert!(tail_r_mass(&dm, 10.0) > budget);
        let m = compute_m(&dm, l);
        assert!(m > 10.0 && m < 10.0 + 1e-8, "m = {m}");
        assert!(tail_r_mass(&dm, m) <= budget);
    }

    #[test]
    fn inadmissible_override_is_rejected() {
        let dm = Arc::new(
            DiscreteMeasure::new(vec![0.5, 10.0], vec![0.5, 0.5], WeightFunction::One).unwrap(),
        );
        let coeffs = Coefficients::bounded_sigma(0.0, -1.0, 1.0, 0.0).unwrap();
        assert!(CouplingConfig::derive_with_m(&dm, &coeffs, 5.0).is_err());
        assert!(CouplingConfig::derive(&dm, &coeffs).is_ok());
    }

    #[test]
    fn missing_sigma_inverse_is_reported() {
        let dm = two_node(WeightFunction::One);
        let coeffs = Coefficients::affine(0.0, 0.0, 1.0, 0.5).unwrap();
        assert!(matches!(
            CouplingConfig::derive(&dm, &coeffs),
            Err(Error::MissingSigmaInverse(_))
        ));
    }

    #[test]
    fn control_vanishes_at_equal_states_and_scales_with_r() {
        let dm = Arc::new(
            DiscreteMeasure::new(vec![2.0], vec![1.0], WeightFunction::power(2.0).unwrap())
                .unwrap(),
        );
        let coeffs = Coefficients::additive(2.0).unwrap();
        let cfg = CouplingConfig::derive_with_m(&dm, &coeffs, 3.0).unwrap();
        let y = LiftState::scalar(dm.clone(), vec![2.0]).unwrap();
        let ybar = LiftState::scalar(dm.clone(), vec![-1.0]).unwrap();
        assert_eq!(control_drift(&y, &y, &cfg, &coeffs).unwrap(), 0.0);
        let v = control_drift(&y, &ybar, &cfg, &coeffs).unwrap();
        let want = 0.5 * 3.0f64.powf(-0.5) * 3.0;
        assert!((v - want).abs() < 1e-15, "{v} vs {want}");
    }

    #[test]
    fn control_norm_bound_holds_on_random_pairs() {
        let dm = two_node(WeightFunction::power(2.0).unwrap());
        let coeffs = Coefficients::bounded_sigma(0.0, -0.3, 1.0, 0.3).unwrap();
        let cfg = CouplingConfig::derive(&dm, &coeffs).unwrap();
        let mut state = 11u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        for _ in 0..50 {
            let y = LiftState::scalar(dm.clone(), vec![next(), next()]).unwrap();
            let ybar = LiftState::scalar(dm.clone(), vec![next(), next()]).unwrap();
            let v = control_drift(&y, &ybar, &cfg, &coeffs).unwrap();
            let dist = y.sub(&ybar).unwrap().norm_h();
            let cap = cfg.lambda * cfg.sigma_inv_sup * dm.mass_r().sqrt() * dist;
            assert!(v.abs() <= cap * (1.0 + 1e-12), "{v} vs {cap}");
        }
    }

    #[test]
    fn equal_starts_stay_identical_with_unit_weight() {
        let dm = two_node(WeightFunction::One);
        let coeffs = Coefficients::bounded_sigma(0.1, -0.3, 1.0, 0.3).unwrap();
        let cfg = CouplingConfig::derive(&dm, &coeffs).unwrap();
        let y = LiftState::scalar(dm.clone(), vec![0.3, -0.2]).unwrap();
        let sim = small_sim(1, 7);
        let run = simulate_coupled_run(&coeffs, &y, &y, &cfg, &sim, 0, None).unwrap();
        assert!(!run.flagged);
        assert!(run.v.iter().all(|&v| v == 0.0));
        assert!(run.log_r.iter().all(|&lr| lr == 0.0));
        for (a, b) in run.y_path.iter().zip(&run.ybar_path) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn additive_noise_difference_is_deterministic_and_contracts() {
        let dm = two_node(WeightFunction::One);
        let coeffs = Coefficients::additive(1.0).unwrap();
        let cfg = CouplingConfig::derive(&dm, &coeffs).unwrap();
        let (y, ybar) = unit_start(&dm);
        let sim = small_sim(1, 21);
        let run = simulate_coupled_run(&coeffs, &y, &ybar, &cfg, &sim, 0, None).unwrap();
        let other_seed = small_sim(1, 99);
        let run2 = simulate_coupled_run(&coeffs, &y, &ybar, &cfg, &other_seed, 0, None).unwrap();
        for (a, b) in run.tilted_dist2.iter().zip(&run2.tilted_dist2) {
            assert!((a - b).abs() <= 1e-11 * a.max(1e-300), "{a} vs {b}");
        }
        for w in run.tilted_dist2.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-14), "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn weight_mean_is_one_within_error() {
        let dm = two_node(WeightFunction::One);
        let coeffs = Coefficients::bounded_sigma(0.0, -0.3, 1.0, 0.3).unwrap();
        let cfg = CouplingConfig::derive(&dm, &coeffs).unwrap();
        let (y, ybar) = unit_start(&dm);
        let sim = small_sim(2000, 5);
        let ens =
            simulate_coupled(&coeffs, &y, &ybar, &cfg, &sim, &[0.25, 0.5, 1.0], None).unwrap();
        assert!(ens.flagged.is_empty());
        let diag = weight_diagnostics(&ens).unwrap();
        assert!(!diag.degenerate);
        for (m, se) in diag.weight_mean.iter().zip(&diag.weight_se) {
            assert!((m - 1.0).abs() <= 3.0 * se, "mean {m}, se {se}");
        }
    }

    #[test]
    fn entropy_stays_under_budget() {
        let dm = two_node(WeightFunction::One);
        let coeffs = Coefficients::bounded_sigma(0.0, -0.3, 1.0, 0.3).unwrap();
        let cfg = CouplingConfig::derive(&dm, &coeffs).unwrap();
        let (y, ybar) = unit_start(&dm);
        let sim = small_sim(2000, 6);
        let ens =
            simulate_coupled(&coeffs, &y, &ybar, &cfg, &sim, &[0.5, 1.0], None).unwrap();
        let rep = entropy_estimate(&ens).unwrap();
        assert!(!rep.degenerate);
        for (e, se) in rep.estimate.iter().zip(&rep.stderr) {
            assert!(e <= &(rep.bound + 3.0 * se), "{e} vs bound {}", rep.bound);
        }
    }

    #[test]
    fn reweighted_distance_stays_under_decay_bound() {
        let dm = two_node(WeightFunction::One);
        let coeffs = Coefficients::bounded_sigma(0.0, -0.3, 1.0, 0.3).unwrap();
        let cfg = CouplingConfig::derive(&dm, &coeffs).unwrap();
        let (y, ybar) = unit_start(&dm);
        let sim = small_sim(2000, 8);
        let ens =
            simulate_coupled(&coeffs, &y, &ybar, &cfg, &sim, &[0.0, 0.5, 1.0], None).unwrap();
        let rep = decay_estimate(&ens, &dm).unwrap();
        assert!((rep.estimate[0] - ens.initial_distance).abs() < 1e-12);
        assert!(rep.bound[0] >= rep.estimate[0]);
        for ((e, se), b) in rep.estimate.iter().zip(&rep.stderr).zip(&rep.bound) {
            assert!(e <= &(b + 3.0 * se), "{e} vs bound {b}");
        }
    }

    #[test]
    fn tiny_cap_flags_every_path() {
        let dm = two_node(WeightFunction::One);
        let coeffs = Coefficients::bounded_sigma(0.0, -0.3, 1.0, 0.3).unwrap();
        let cfg = CouplingConfig::derive(&dm, &coeffs).unwrap();
        let (y, ybar) = unit_start(&dm);
        let sim = small_sim(16, 3);
        let ens =
            simulate_coupled(&coeffs, &y, &ybar, &cfg, &sim, &[1.0], Some(0.1)).unwrap();
        assert_eq!(ens.flagged.len(), 16);
        assert!(entropy_estimate(&ens).is_err());
    }

    #[test]
    fn slope_fit_recovers_exact_exponential() {
        let times: Vec<f64> = (0..40).map(|k| k as f64 * 0.25).collect();
        let values: Vec<f64> = times.iter().map(|&t| 3.0 * (-0.7 * t).exp()).collect();
        let slope = fitted_log_slope(&times, &values, 1.0, 8.0).unwrap();
        assert!((slope + 0.7).abs() < 1e-12);
    }

    #[test]
    fn harnack_trivial_observable_holds() {
        let dm = two_node(WeightFunction::One);
        let coeffs = Coefficients::bounded_sigma(0.0, -0.3, 1.0, 0.3).unwrap();
        let cfg = CouplingConfig::derive(&dm, &coeffs).unwrap();
        let (y, ybar) = unit_start(&dm);
        let sim = small_sim(200, 12);
        let reports = harnack_check(
            &[HarnackFunction::One],
            &y,
            &ybar,
            &cfg,
            &coeffs,
            &sim,
            &[1.0],
        )
        .unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].lhs, 0.0);
        assert!(reports[0].rhs >= 0.0);
        assert!(reports[0].holds);
    }

    #[test]
    fn harnack_equal_starts_is_sample_exact_jensen() {
        let dm = two_node(WeightFunction::One);
        let coeffs = Coefficients::bounded_sigma(0.0, -0.3, 1.0, 0.3).unwrap();
        let cfg = CouplingConfig::derive(&dm, &coeffs).unwrap();
        let y = LiftState::scalar(dm.clone(), vec![0.4, -0.1]).unwrap();
        let sim = small_sim(400, 13);
        let f = HarnackFunction::dist_cap(LiftState::zero(dm.clone(), 1).unwrap(), 2.0).unwrap();
        let reports = harnack_check(&[f], &y, &y, &cfg, &coeffs, &sim, &[0.5]).unwrap();
        let rep = &reports[0];
        assert_eq!(rep.quadratic_term, 0.0);
        assert_eq!(rep.decay_term, 0.0);
        assert!(rep.lhs <= rep.rhs + 1e-12);
        assert!(rep.rhs > rep.lhs, "Jensen gap should be strict");
    }

    #[test]
    fn harnack_distinct_starts_hold_within_error() {
        let dm = two_node(WeightFunction::One);
        let coeffs = Coefficients::bounded_sigma(0.0, -0.3, 1.0, 0.3).unwrap();
        let cfg = CouplingConfig::derive(&dm, &coeffs).unwrap();
        let (y, ybar) = unit_start(&dm);
        let sim = small_sim(2000, 14);
        let z = LiftState::zero(dm.clone(), 1).unwrap();
        let family = vec![
            HarnackFunction::dist_cap(z.clone(), 1.0).unwrap(),
            HarnackFunction::exp_inner(
                LiftState::scalar(dm.clone(), vec![0.5, 0.5]).unwrap(),
                3.0,
            )
            .unwrap(),
        ];
        let reports =
            harnack_check(&family, &y, &ybar, &cfg, &coeffs, &sim, &[0.5, 1.0]).unwrap();
        assert_eq!(reports.len(), 4);
        for rep in &reports {
            assert!(rep.holds, "{} at t = {}", rep.f_id, rep.t);
            assert!(rep.margin_sigmas.is_finite());
        }
    }

    #[test]
    fn custom_observable_requires_finite_gradient_bound() {
        let f = Arc::new(|_: &LiftState| 1.0);
        assert!(HarnackFunction::custom("bad", f.clone(), f64::NAN).is_err());
        assert!(HarnackFunction::custom("ok", f, 0.0).is_ok());
    }

    #[test]
    fn reports_serialize_with_flat_fields() {
        let dm = two_node(WeightFunction::One);
        let coeffs = Coefficients::bounded_sigma(0.0, -0.3, 1.0, 0.3).unwrap();
        let cfg = CouplingConfig::derive(&dm, &coeffs).unwrap();
        let (y, ybar) = unit_start(&dm);
        let sim = small_sim(200, 2);
        let ens = simulate_coupled(&coeffs, &y, &ybar, &cfg, &sim, &[1.0], None).unwrap();
        let rep = entropy_estimate(&ens).unwrap();
        let json = serde_json::to_value(&rep).unwrap();
        assert!(json["bound"].is_number());
        let rep = decay_estimate(&ens, &dm).unwrap();
        let json = serde_json::to_value(&rep).unwrap();
        assert_eq!(json["bound"].as_array().unwrap().len(), 1);
    }
}
