//! Property tests for kernels, weights, and discretization.

mod common;

use proptest::prelude::*;
use volterra_lift::kernels::{
    kernel_l2_error, DiscreteMeasure, DiscretizeScheme, Kernel, WeightFunction,
};

fn expsum_strategy() -> impl Strategy<Value = Kernel> {
    prop::collection::vec((0.01f64..50.0, 0.05f64..2.0), 1..6).prop_map(|pairs| {
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for (th, c) in pairs {
            if nodes.iter().all(|&u: &f64| (u - th).abs() > 1e-9) {
                nodes.push(th);
                weights.push(c);
            }
        }
        Kernel::exponential_sum(nodes, weights).unwrap()
    })
}

fn kernel_strategy() -> impl Strategy<Value = Kernel> {
    prop_oneof![
        (0.55f64..0.95).prop_map(|a| Kernel::fractional(a).unwrap()),
        (0.55f64..0.95, 0.2f64..3.0).prop_map(|(a, b)| Kernel::gamma(a, b).unwrap()),
        expsum_strategy(),
        (0.55f64..0.95, 0.1f64..2.0)
            .prop_map(|(a, b)| Kernel::damped(Kernel::fractional(a).unwrap(), b).unwrap()),
        (0.55f64..0.95, 0.1f64..2.0)
            .prop_map(|(a, d)| Kernel::shifted(Kernel::fractional(a).unwrap(), d).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernels_are_positive_and_nonincreasing(
        kernel in kernel_strategy(),
        t1 in 1e-3f64..10.0,
        step in 0.01f64..5.0,
    ) {
        let t2 = t1 + step;
        let k1 = kernel.eval(t1).unwrap();
        let k2 = kernel.eval(t2).unwrap();
        prop_assert!(k1 > 0.0 && k2 > 0.0);
        prop_assert!(k2 <= k1 * (1.0 + 1e-12), "K({t2}) = {k2} > K({t1}) = {k1}");
    }

    #[test]
    fn discretization_reproduces_the_kernel_on_a_grid(
        kernel in kernel_strategy(),
        t in 0.05f64..3.0,
    ) {
        let dm = kernel.discretize(60, DiscretizeScheme::GeometricMomentMatch, 3.0).unwrap();
        let exact = kernel.eval(t).unwrap();
        let approx = dm.kernel_value(t);
        prop_assert!(
            (approx - exact).abs() <= 0.08 * exact.abs() + 1e-9,
            "t={t}: {approx} vs {exact}"
        );
    }

    #[test]
    fn default_weights_stay_within_the_admissible_band(
        p in 2.0f64..10.0,
        theta1 in 0.0f64..100.0,
        step in 0.1f64..50.0,
    ) {
        let w = WeightFunction::power(p).unwrap();
        let theta2 = theta1 + step;
        let (r1, r2) = (w.eval(theta1), w.eval(theta2));
        prop_assert!(r1 <= 1.0 && r2 <= 1.0);
        prop_assert!(r2 <= r1, "weight must be non-increasing");
        for (th, r) in [(theta1, r1), (theta2, r2)] {
            let floor = if th <= 1.0 { 1.0 } else { th.powf(-0.5) };
            prop_assert!(r >= floor * (1.0 - 1e-12), "r({th}) = {r} below {floor}");
        }
        prop_assert!((w.eval(0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn discrete_measures_are_sorted_with_positive_weights(kernel in kernel_strategy()) {
        let dm = kernel.discretize(30, DiscretizeScheme::GeometricMomentMatch, 2.0).unwrap();
        let nodes = dm.nodes();
        prop_assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(dm.weights().iter().all(|&c| c > 0.0));
        prop_assert!(dm.r_values().iter().all(|&r| r > 0.0 && r <= 1.0));
        prop_assert!(dm.mass_r() > 0.0);
    }

    #[test]
    fn exponential_sums_discretize_to_their_own_atoms(
        kernel in expsum_strategy(),
        t in 0.0f64..5.0,
    ) {
        let dm = kernel.discretize(7, DiscretizeScheme::GeometricMomentMatch, 1.0).unwrap();
        prop_assert!(dm.nodes().iter().all(|&th| th >= 0.0));
        let exact = kernel.eval(t).unwrap();
        let from_atoms = dm.kernel_value(t);
        prop_assert!(
            (from_atoms - exact).abs() <= 1e-12 * exact.max(1e-300),
            "t={t}: atoms give {from_atoms}, kernel {exact}"
        );
    }

    #[test]
    fn invariant_criterion_tracks_the_support(
        alpha in 0.55f64..0.95,
        beta in 0.2f64..3.0,
    ) {
        prop_assert!(!Kernel::fractional(alpha).unwrap().invariant_criterion());
        prop_assert!(Kernel::gamma(alpha, beta).unwrap().invariant_criterion());
        prop_assert!(
            Kernel::damped(Kernel::fractional(alpha).unwrap(), beta)
                .unwrap()
                .invariant_criterion()
        );
        prop_assert!(
            !Kernel::shifted(Kernel::fractional(alpha).unwrap(), beta)
                .unwrap()
                .invariant_criterion()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn refinement_never_worsens_the_l2_error_much(alpha in 0.6f64..0.9) {
        let kernel = Kernel::gamma(alpha, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for n in [10usize, 30, 100] {
            let dm = kernel.discretize(n, DiscretizeScheme::GeometricMomentMatch, 1.0).unwrap();
            let err = kernel_l2_error(&kernel, &dm, 1.0).unwrap();
            prop_assert!(err <= prev * 1.05, "n={n}: {err} vs previous {prev}");
            prev = err;
        }
    }
}

#[test]
fn zero_node_kernels_fail_the_invariant_criterion() {
    let k = Kernel::exponential_sum(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
    assert!(!k.invariant_criterion());
    let dm = DiscreteMeasure::new(vec![0.0, 1.0], vec![0.5, 0.5], WeightFunction::One).unwrap();
    assert!(!dm.invariant_criterion());
    let positive = Kernel::exponential_sum(vec![0.4, 1.0], vec![0.5, 0.5]).unwrap();
    assert!(positive.invariant_criterion());
}

#[test]
fn discrete_l2_error_agrees_with_the_quadrature_oracle() {
    let kernel = Kernel::gamma(0.7, 1.0).unwrap();
    let dm = kernel
        .discretize(40, DiscretizeScheme::GeometricMomentMatch, 1.0)
        .unwrap();
    let g = common::gamma_oracle(0.7);
    let oracle = common::rel_l2_kernel_error(
        move |t| (-t).exp() * t.powf(-0.3) / g,
        dm.nodes(),
        dm.weights(),
        1e-6,
        1.0,
    );
    let lib = kernel_l2_error(&kernel, &dm, 1.0).unwrap();
    assert!(
        (lib - oracle).abs() < 0.05 * oracle,
        "library {lib} vs oracle {oracle}"
    );
}
