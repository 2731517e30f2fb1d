//! Internal adaptive quadrature.
//!
//! Two building blocks are enough for everything the crate integrates:
//!
//! * adaptive Simpson with Richardson extrapolation on smooth integrands,
//! * a power substitution u = v^{1/(1−α)} that turns ∫_0^w u^{−α} g(u) u^k du
//!   (integrable endpoint singularity of known exponent) into a smooth
//!   integral, used for cells touching the support edge of a singular
//!   Bernstein density.

/// Adaptive Simpson rule on [a, b] with absolute tolerance `tol`.
///
/// The integrand must be finite on [a, b]. Tolerance is distributed over
/// subintervals in the usual halving fashion and floored at the roundoff
/// level of the local panel value, so a tolerance far below machine
/// precision of the result terminates at roundoff accuracy instead of
/// recursing; depth is capped as a final guard against pathological
/// integrands.
pub(crate) fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(a, b, fa, fm, fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 40)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    let floor = 4.0 * f64::EPSILON * (left.abs() + right.abs());
    if depth == 0 || delta.abs() <= (15.0 * tol).max(floor) || m <= a || b <= m {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Integral over [a, b], 0 < a < b, on geometrically graded panels.
///
/// Splits [a, b] into `panels_per_decade`-per-decade geometric panels and
/// applies adaptive Simpson on each, so integrands with power-law behaviour
/// near a (kernel reconstruction errors near t = 0) are resolved without a
/// global fine mesh. `tol` is the absolute tolerance per panel.
pub(crate) fn integrate_graded<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    panels_per_decade: usize,
    tol: f64,
) -> f64 {
    assert!(a > 0.0 && b > a, "graded integration needs 0 < a < b");
    let decades = (b / a).log10();
    let n_panels = ((decades * panels_per_decade as f64).ceil() as usize).max(1);
    let ratio = (b / a).powf(1.0 / n_panels as f64);
    let mut total = 0.0;
    let mut lo = a;
    for k in 0..n_panels {
        let hi = if k + 1 == n_panels { b } else { lo * ratio };
        total += adaptive_simpson(f, lo, hi, tol);
        lo = hi;
    }
    total
}

/// ∫_0^w u^{−α} u^{pow} g(u) du for α ∈ (0, 1), pow ∈ {0, 1}, g smooth.
///
/// Substituting u = v^{1/(1−α)} removes the endpoint singularity:
///
/// ```text
/// ∫_0^w u^{pow−α} g(u) du = (1/(1−α)) ∫_0^{w^{1−α}} v^{pow/(1−α)} g(v^{1/(1−α)}) dv.
/// ```
pub(crate) fn power_singular_integral<G: Fn(f64) -> f64>(
    g: &G,
    w: f64,
    alpha: f64,
    pow: u32,
    tol: f64,
) -> f64 {
    debug_assert!((0.0..1.0).contains(&alpha));
    let q = 1.0 / (1.0 - alpha);
    let v_max = w.powf(1.0 - alpha);
    let p = pow as f64 * q;
    let transformed = |v: f64| {
        let u = v.powf(q);
        let weight = if pow == 0 { 1.0 } else { v.powf(p) };
        weight * g(u)
    };
    q * adaptive_simpson(&transformed, 0.0, v_max, tol / q)
}
