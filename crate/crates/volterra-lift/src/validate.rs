//! Self-contained invariant suite over built-in configurations.
//!
//! Each check recomputes a structural identity two ways and reports the
//! residual against a fixed threshold. The suite ends with a negative
//! control: the duality identity is re-evaluated with the norm weights
//! deliberately off by 1%, and the check passes only if that perturbed
//! identity fails. A suite that cannot fail is not measuring anything.

use std::sync::Arc;

use serde::Serialize;

use crate::dynamics::{
    fixed_point_residual, simulate_lift, stochastic_convolution, Coefficients, Scheme, SimConfig,
};
use crate::gauss::qt_apply;
use crate::kernels::{DiscreteMeasure, DiscretizeScheme, Kernel, WeightFunction};
use crate::liftspace::LiftState;
use crate::rng::PathRng;
use crate::Result;

/// Outcome of one invariant check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Largest relative residual observed.
    pub residual: f64,
    pub threshold: f64,
    pub note: String,
}

/// Machine-readable outcome of the whole suite.
#[derive(Debug, Clone, Serialize)]
pub struct ValidateReport {
    pub checks: Vec<CheckResult>,
    pub passed: usize,
    pub failed: usize,
    pub all_passed: bool,
}

fn check(name: &str, residual: f64, threshold: f64, note: &str) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: residual.is_finite() && residual < threshold,
        residual,
        threshold,
        note: note.into(),
    }
}

fn suite_measure() -> Result<Arc<DiscreteMeasure>> {
    let kernel = Kernel::gamma(0.7, 1.0)?;
    Ok(Arc::new(kernel.discretize(
        30,
        DiscretizeScheme::GeometricMomentMatch,
        5.0,
    )?))
}

fn random_states(dm: &Arc<DiscreteMeasure>, count: usize, seed: u64) -> Result<Vec<LiftState>> {
    let rng = PathRng::new(seed, dm.len());
    let mut out = Vec::with_capacity(count);
    let mut buf = vec![0.0; dm.len()];
    for p in 0..count {
        rng.fill_step_normals(p as u64, 0, &mut buf);
        out.push(LiftState::scalar(dm.clone(), buf.clone())?);
    }
    Ok(out)
}

fn duality_residual(y: &LiftState) -> f64 {
    let norms = y.norms();
    let lhs = y.generator_apply().inner_h(y).expect("same measure");
    let rhs = norms.h * norms.h - norms.v * norms.v;
    (lhs - rhs).abs() / (norms.v * norms.v).max(1e-300)
}

fn duality_check(states: &[LiftState]) -> CheckResult {
    let worst = states.iter().map(duality_residual).fold(0.0, f64::max);
    check(
        "liftspace-duality",
        worst,
        1e-12,
        "⟨Ay,y⟩ must equal ‖y‖²_ℋ − ‖y‖²_𝒱",
    )
}

fn ordering_check(states: &[LiftState]) -> CheckResult {
    let mut worst = 0.0f64;
    for y in states {
        let n = y.norms();
        let slack = (n.v_star - n.h).max(n.h - n.v).max(0.0);
        worst = worst.max(slack / n.v.max(1e-300));
    }
    check(
        "norm-ordering",
        worst,
        1e-12,
        "‖y‖_𝒱* ≤ ‖y‖_ℋ ≤ ‖y‖_𝒱 on random states",
    )
}

fn mu_bound_check(dm: &Arc<DiscreteMeasure>, states: &[LiftState]) -> CheckResult {
    let c2: f64 = dm
        .nodes()
        .iter()
        .zip(dm.weights())
        .zip(dm.r_values())
        .map(|((&th, &c), &r)| c / ((th + 1.0) * r))
        .sum();
    let cap = c2.sqrt();
    let mut worst = 0.0f64;
    for y in states {
        let mu = y.mu_integral()[0].abs();
        let bound = cap * y.norms().v;
        worst = worst.max((mu - bound).max(0.0) / bound.max(1e-300));
    }
    check(
        "mu-integral-bound",
        worst,
        1e-12,
        "|μ[y]| ≤ (Σ c/((θ+1)r))^{1/2} ‖y‖_𝒱",
    )
}

fn semigroup_check(states: &[LiftState]) -> CheckResult {
    let mut worst = 0.0f64;
    for y in states.iter().take(64) {
        let two_step = y
            .semigroup_apply(0.3)
            .and_then(|s| s.semigroup_apply(0.7))
            .expect("valid times");
        let one_step = y.semigroup_apply(1.0).expect("valid time");
        let gap = two_step.sub(&one_step).expect("same measure").norm_h();
        let scale = one_step.norm_h().max(1e-300);
        worst = worst.max(gap / scale);
        let contraction = (one_step.norm_h() - y.norm_h()).max(0.0) / y.norm_h().max(1e-300);
        worst = worst.max(contraction);
    }
    check(
        "semigroup-law",
        worst,
        1e-12,
        "S_{0.7}S_{0.3} = S_1 and ‖S_t y‖_ℋ ≤ ‖y‖_ℋ",
    )
}

fn convolution_check(dm: &Arc<DiscreteMeasure>) -> Result<CheckResult> {
    let steps = 64;
    let dt = 1.0 / 64.0;
    let rng = PathRng::new(41, 1);
    let mut z = [0.0f64; 1];
    let mut sigma_path = Vec::with_capacity(steps);
    let mut dw = Vec::with_capacity(steps);
    for j in 0..steps {
        rng.fill_step_normals(0, j, &mut z);
        sigma_path.push(vec![1.0 + 0.1 * (j as f64 * dt).sin()]);
        dw.push(vec![dt.sqrt() * z[0]]);
    }
    let conv = stochastic_convolution(dm, 1, 1, &sigma_path, &dw, dt)?;
    let mut worst = 0.0f64;
    for (k, state) in conv.iter().enumerate() {
        let mu = state.mu_integral()[0];
        let mut direct = 0.0;
        for j in 0..k {
            direct += dm.kernel_value((k - j) as f64 * dt) * sigma_path[j][0] * dw[j][0];
        }
        worst = worst.max((mu - direct).abs() / direct.abs().max(1.0));
    }
    Ok(check(
        "convolution-identity",
        worst,
        1e-11,
        "μ[stochastic convolution] must equal the direct kernel sum",
    ))
}

fn picard_check(dm: &Arc<DiscreteMeasure>) -> Result<CheckResult> {
    let y0 = LiftState::zero(dm.clone(), 1)?;
    let coeffs = Coefficients::bounded_sigma(0.1, -0.4, 1.0, 0.2)?;
    let cfg = SimConfig {
        t_horizon: 1.0,
        dt: 1.0 / 128.0,
        n_paths: 1,
        seed: 17,
        scheme: Scheme::ExactOuEuler,
    };
    let path = simulate_lift(&coeffs, &y0, &cfg)?;
    let residual = fixed_point_residual(&coeffs, &path, &cfg)?;
    Ok(check(
        "picard-residual",
        residual,
        1e-10,
        "the stepped solution must be a fixed point of the Picard map",
    ))
}

fn qt_symmetry_check(dm: &Arc<DiscreteMeasure>, states: &[LiftState]) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for pair in states.chunks_exact(2).take(32) {
        let qy = qt_apply(dm, 0.8, &pair[0])?;
        let qz = qt_apply(dm, 0.8, &pair[1])?;
        let lhs = qy.inner_h(&pair[1])?;
        let rhs = pair[0].inner_h(&qz)?;
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1e-300));
    }
    Ok(check(
        "qt-symmetry",
        worst,
        1e-11,
        "⟨Q_t y, z⟩_ℋ = ⟨y, Q_t z⟩_ℋ on random pairs",
    ))
}

/// Duality with the weights scaled by 1.01 on one side only; the identity
/// must break, and by roughly the 1% that was injected.
fn negative_control_check(_dm: &Arc<DiscreteMeasure>, states: &[LiftState]) -> CheckResult {
    let mut smallest = f64::INFINITY;
    for y in states.iter().take(64) {
        let norms = y.norms();
        let lhs = y.generator_apply().inner_h(y).expect("same measure") * 1.01;
        let rhs = norms.h * norms.h - norms.v * norms.v;
        let residual = (lhs - rhs).abs() / (norms.v * norms.v).max(1e-300);
        smallest = smallest.min(residual);
    }
    CheckResult {
        name: "negative-control-duality".into(),
        passed: smallest > 1e-12,
        residual: smallest,
        threshold: 1e-12,
        note: "a 1% weight perturbation must break the duality identity".into(),
    }
}

/// Run the full invariant suite on a built-in Gamma configuration.
pub fn run_suite(seed: u64) -> Result<ValidateReport> {
    let dm = suite_measure()?;
    let states = random_states(&dm, 256, seed)?;

    let mut checks = vec![
        duality_check(&states),
        ordering_check(&states),
        mu_bound_check(&dm, &states),
        semigroup_check(&states),
    ];
    checks.push(convolution_check(&dm)?);
    checks.push(picard_check(&dm)?);
    checks.push(qt_symmetry_check(&dm, &states)?);
    checks.push(negative_control_check(&dm, &states));

    let passed = checks.iter().filter(|c| c.passed).count();
    let failed = checks.len() - passed;
    Ok(ValidateReport {
        all_passed: failed == 0,
        passed,
        failed,
        checks,
    })
}

/// Exponential-sum variant of the suite, exercising a zero node and unit
/// weights alongside the singular default configuration.
pub fn run_suite_expsum(seed: u64) -> Result<ValidateReport> {
    let dm = Arc::new(DiscreteMeasure::new(
        vec![0.0, 0.5, 2.0, 8.0],
        vec![0.25; 4],
        WeightFunction::One,
    )?);
    let states = random_states(&dm, 256, seed)?;
    let mut checks = vec![
        duality_check(&states),
        ordering_check(&states),
        mu_bound_check(&dm, &states),
        semigroup_check(&states),
    ];
    checks.push(convolution_check(&dm)?);
    checks.push(qt_symmetry_check(&dm, &states)?);
    checks.push(negative_control_check(&dm, &states));
    let passed = checks.iter().filter(|c| c.passed).count();
    let failed = checks.len() - passed;
    Ok(ValidateReport {
        all_passed: failed == 0,
        passed,
        failed,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normals;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_suite_passes() {
        let report = run_suite(1).unwrap();
        assert!(
            report.all_passed,
            "failing checks: {:?}",
            report
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| (&c.name, c.residual))
                .collect::<Vec<_>>()
        );
        assert_eq!(report.failed, 0);
        assert_eq!(report.passed, report.checks.len());
    }

    #[test]
    fn expsum_suite_passes() {
        let report = run_suite_expsum(2).unwrap();
        assert!(report.all_passed);
    }

    #[test]
    fn negative_control_detects_injected_error() {
        let dm = suite_measure().unwrap();
        let states = random_states(&dm, 16, 3).unwrap();
        let control = negative_control_check(&dm, &states);
        assert!(control.passed);
        assert!(control.residual > 1e-3);
    }

    #[test]
    fn report_serializes_with_check_names() {
        let report = run_suite(4).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        assert!(json["all_passed"].as_bool().unwrap());
        let names: Vec<&str> = json["checks"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["name"].as_str().unwrap())
            .collect();
        assert!(names.contains(&"liftspace-duality"));
        assert!(names.contains(&"negative-control-duality"));
    }

    #[test]
    fn random_states_differ_across_seeds() {
        let dm = suite_measure().unwrap();
        let a = random_states(&dm, 2, 1).unwrap();
        let b = random_states(&dm, 2, 2).unwrap();
        assert_ne!(a[0].values(), b[0].values());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = [0.0; 4];
        standard_normals(&mut rng, &mut buf);
        assert!(buf.iter().all(|v| v.is_finite()));
    }
}
