//! Shared oracles for the integration suites. Every expected value here is
//! produced by an independent route (plain quadrature, direct summation,
//! brute-force scans), so the library's algebra is never asked to confirm
//! itself.

#![allow(dead_code)]

/// Composite Simpson rule with `panels` even subintervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    assert!(panels >= 2 && panels % 2 == 0, "panels must be even");
    let h = (b - a) / panels as f64;
    let mut acc = f(a) + f(b);
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

/// Γ(x) for x in (0, 4), by pushing the argument into [3, 4) with the
/// recurrence and integrating t^{x−1}e^{−t} on [0, 100] directly.
pub fn gamma_oracle(x: f64) -> f64 {
    assert!(x > 0.0 && x < 4.0, "oracle covers (0, 4), got {x}");
    let mut shift = 1.0;
    let mut z = x;
    while z < 3.0 {
        shift *= z;
        z += 1.0;
    }
    let integral = simpson(|t| if t == 0.0 { 0.0 } else { t.powf(z - 1.0) * (-t).exp() }, 0.0, 100.0, 50_000);
    integral / shift
}

/// Relative L² error of the exponential-sum reconstruction against a
/// closed-form kernel on (t_lo, t_hi), by graded Simpson panels over
/// decades. Both integrands are evaluated from scratch.
pub fn rel_l2_kernel_error(
    kernel: impl Fn(f64) -> f64,
    nodes: &[f64],
    weights: &[f64],
    t_lo: f64,
    t_hi: f64,
) -> f64 {
    assert!(t_lo > 0.0 && t_hi > t_lo);
    let kbar = |t: f64| -> f64 {
        nodes
            .iter()
            .zip(weights)
            .map(|(&th, &c)| c * (-th * t).exp())
            .sum()
    };
    let mut num = 0.0;
    let mut den = 0.0;
    let mut lo = t_lo;
    while lo < t_hi {
        let hi = (lo * 10.0).min(t_hi);
        num += simpson(|t| (kernel(t) - kbar(t)).powi(2), lo, hi, 512);
        den += simpson(|t| kernel(t).powi(2), lo, hi, 512);
        lo = hi;
    }
    (num / den).sqrt()
}

/// Itô-isometry variance of X_t for b = 0, σ = 1:
/// ∑ᵢⱼ cᵢcⱼ (1−e^{−(θᵢ+θⱼ)t})/(θᵢ+θⱼ), the zero-sum pair contributing t.
pub fn double_sum_var(nodes: &[f64], weights: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for (i, &thi) in nodes.iter().enumerate() {
        for (j, &thj) in nodes.iter().enumerate() {
            let s = thi + thj;
            let term = if s == 0.0 { t } else { (1.0 - (-s * t).exp()) / s };
            acc += weights[i] * weights[j] * term;
        }
    }
    acc
}

/// Standard error of an unbiased sample variance of Gaussian data.
pub fn var_se(variance: f64, n: usize) -> f64 {
    variance * (2.0 / (n as f64 - 1.0)).sqrt()
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, &x) in xs.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (x - mean);
    }
    let var = if xs.len() > 1 { m2 / (n - 1.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

/// Smallest admissible m ≥ 1 by brute force: every node value and its
/// upward neighbour is a candidate, the closed tail ∑_{θᵢ≥m} cᵢrᵢ is
/// re-summed from scratch for each, and the first candidate within the
/// budget 1/(2L²(1 + ∑cᵢrᵢ)) wins.
pub fn exhaustive_m(nodes: &[f64], weights: &[f64], r_values: &[f64], l: f64) -> f64 {
    if l == 0.0 {
        return 1.0;
    }
    let mass_r: f64 = weights.iter().zip(r_values).map(|(c, r)| c * r).sum();
    let budget = 1.0 / (2.0 * l * l * (1.0 + mass_r));
    let mut candidates = vec![1.0f64];
    for &th in nodes {
        if th >= 1.0 {
            candidates.push(th);
        }
        let up = th.next_up();
        if up >= 1.0 {
            candidates.push(up);
        }
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();
    for &m in &candidates {
        let tail: f64 = nodes
            .iter()
            .zip(weights.iter().zip(r_values))
            .filter(|(&th, _)| th >= m)
            .map(|(_, (&c, &r))| c * r)
            .sum();
        if tail <= budget * (1.0 + 1e-12) {
            return m;
        }
    }
    unreachable!("the candidate above the largest node always has an empty tail");
}

/// Small deterministic generator for oracle-side random configurations,
/// unrelated to the library's counter-based streams.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        self.0
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}
