//! Configuration loading: strict JSON parsing first, then every numeric
//! constraint re-checked through the library constructors so errors carry
//! field-level messages.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use volterra_lift::dynamics::{Coefficients, Scheme, SimConfig};
use volterra_lift::kernels::{DiscreteMeasure, DiscretizeScheme, Kernel, WeightFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    Equivalence,
    Gauss,
    Couple,
    Harnack,
    Validate,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Equivalence => "equivalence",
            Self::Gauss => "gauss",
            Self::Couple => "couple",
            Self::Harnack => "harnack",
            Self::Validate => "validate",
        }
    }
}

/// Kernel section. A single struct with a `type` discriminator keeps
/// unknown-key rejection working; per-type field applicability is checked
/// in `build_kernel`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Box<KernelSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationSpec {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsSpec {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub t_horizon: f64,
    pub dt: f64,
    pub n_paths: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
}

/// Options used only by the couple and harnack experiments.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    /// ‖y − ȳ‖_ℋ of the initial pair; 0 starts both at the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub kernel: KernelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discretization: Option<DiscretizationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<CoefficientsSpec>,
    pub sim: SimSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingSpec>,
}

impl RunConfig {
    /// Read and strictly parse a config file; unknown keys are rejected
    /// with the offending field named.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    /// Stock configuration for a bare `validate` run.
    pub fn default_validate(seed: u64) -> Self {
        RunConfig {
            experiment: Experiment::Validate,
            kernel: KernelSpec {
                kind: "gamma".into(),
                alpha: Some(0.7),
                beta: Some(1.0),
                nodes: None,
                weights: None,
                base: None,
                delta: None,
            },
            discretization: Some(DiscretizationSpec {
                n: 30,
                scheme: None,
            }),
            weight_p: None,
            coefficients: None,
            sim: SimSpec {
                t_horizon: 1.0,
                dt: 1.0 / 64.0,
                n_paths: 100,
                seed,
                scheme: None,
            },
            coupling: None,
        }
    }

    /// SHA-256 of the canonical JSON form of the effective config.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Library-level objects produced by validation, ready to run.
pub struct Built {
    pub experiment: Experiment,
    pub kernel: Kernel,
    pub dm: Arc<DiscreteMeasure>,
    pub coeffs: Coefficients,
    pub sim: SimConfig,
    pub distance: f64,
    pub record_times: Option<Vec<f64>>,
    pub cap: Option<f64>,
}

fn require(field: &str, value: Option<f64>, kind: &str) -> Result<f64> {
    value.ok_or_else(|| anyhow::anyhow!("kernel.{field}: required for type '{kind}'"))
}

fn reject_extras(spec: &KernelSpec, allowed: &[&str]) -> Result<()> {
    let present = [
        ("alpha", spec.alpha.is_some()),
        ("beta", spec.beta.is_some()),
        ("nodes", spec.nodes.is_some()),
        ("weights", spec.weights.is_some()),
        ("base", spec.base.is_some()),
        ("delta", spec.delta.is_some()),
    ];
    for (name, set) in present {
        if set && !allowed.contains(&name) {
            bail!(
                "kernel.{name}: does not apply to type '{kind}'",
                kind = spec.kind
            );
        }
    }
    Ok(())
}

pub fn build_kernel(spec: &KernelSpec) -> Result<Kernel> {
    let kernel = match spec.kind.as_str() {
        "exponential-sum" => {
            reject_extras(spec, &["nodes", "weights"])?;
            Kernel::exponential_sum(
                spec.nodes
                    .clone()
                    .ok_or_else(|| anyhow::anyhow!("kernel.nodes: required"))?,
                spec.weights
                    .clone()
                    .ok_or_else(|| anyhow::anyhow!("kernel.weights: required"))?,
            )
        }
        "fractional" => {
            reject_extras(spec, &["alpha"])?;
            Kernel::fractional(require("alpha", spec.alpha, "fractional")?)
        }
        "gamma" => {
            reject_extras(spec, &["alpha", "beta"])?;
            Kernel::gamma(
                require("alpha", spec.alpha, "gamma")?,
                require("beta", spec.beta, "gamma")?,
            )
        }
        "shifted" => {
            reject_extras(spec, &["base", "delta"])?;
            let base = spec
                .base
                .as_deref()
                .ok_or_else(|| anyhow::anyhow!("kernel.base: required for type 'shifted'"))?;
            Kernel::shifted(
                build_kernel(base)?,
                require("delta", spec.delta, "shifted")?,
            )
        }
        "damped" => {
            reject_extras(spec, &["base", "beta"])?;
            let base = spec
                .base
                .as_deref()
                .ok_or_else(|| anyhow::anyhow!("kernel.base: required for type 'damped'"))?;
            Kernel::damped(build_kernel(base)?, require("beta", spec.beta, "damped")?)
        }
        other => bail!(
            "kernel.type: unknown kernel '{other}', expected one of \
             exponential-sum, fractional, gamma, shifted, damped"
        ),
    };
    kernel.map_err(|e| anyhow::anyhow!("kernel: {e}"))
}

fn build_coefficients(spec: Option<&CoefficientsSpec>) -> Result<Coefficients> {
    let Some(spec) = spec else {
        return Ok(Coefficients::additive(1.0).expect("unit additive noise is valid"));
    };
    let get = |field: &str, v: Option<f64>| -> Result<f64> {
        v.ok_or_else(|| {
            anyhow::anyhow!(
                "coefficients.{field}: required for family '{}'",
                spec.family
            )
        })
    };
    let forbid = |field: &str, v: Option<f64>| -> Result<()> {
        if v.is_some() {
            bail!(
                "coefficients.{field}: does not apply to family '{}'",
                spec.family
            );
        }
        Ok(())
    };
    let coeffs = match spec.family.as_str() {
        "additive" => {
            forbid("b0", spec.b0)?;
            forbid("b1", spec.b1)?;
            forbid("s0", spec.s0)?;
            forbid("s1", spec.s1)?;
            Coefficients::additive(get("sigma", spec.sigma)?)
        }
        "affine" => {
            forbid("sigma", spec.sigma)?;
            Coefficients::affine(
                get("b0", spec.b0)?,
                get("b1", spec.b1)?,
                get("s0", spec.s0)?,
                get("s1", spec.s1)?,
            )
        }
        "bounded-sigma" => {
            forbid("sigma", spec.sigma)?;
            Coefficients::bounded_sigma(
                get("b0", spec.b0)?,
                get("b1", spec.b1)?,
                get("s0", spec.s0)?,
                get("s1", spec.s1)?,
            )
        }
        other => bail!(
            "coefficients.family: unknown family '{other}', expected one of \
             additive, affine, bounded-sigma"
        ),
    };
    coeffs.map_err(|e| anyhow::anyhow!("coefficients: {e}"))
}

fn build_measure(cfg: &RunConfig, kernel: &Kernel) -> Result<Arc<DiscreteMeasure>> {
    let (n, scheme) = match &cfg.discretization {
        Some(d) => {
            let scheme = match d.scheme.as_deref() {
                None | Some("geometric-moment-match") => DiscretizeScheme::GeometricMomentMatch,
                Some("user-nodes") => DiscretizeScheme::UserNodes,
                Some(other) => bail!(
                    "discretization.scheme: unknown scheme '{other}', expected \
                     geometric-moment-match or user-nodes"
                ),
            };
            (d.n, scheme)
        }
        None => {
            if kernel.atoms().is_none() {
                bail!(
                    "discretization: required for this kernel (its Bernstein \
                     measure is not atomic and the kernel is singular at t = 0); \
                     add e.g. {{\"n\": 50, \"scheme\": \"geometric-moment-match\"}}"
                );
            }
            (1, DiscretizeScheme::UserNodes)
        }
    };
    let dm = match cfg.weight_p {
        None => kernel.discretize(n, scheme, cfg.sim.t_horizon),
        Some(p) => {
            let wf = WeightFunction::power(p).map_err(|e| anyhow::anyhow!("weight_p: {e}"))?;
            kernel.discretize_with_weight(n, scheme, cfg.sim.t_horizon, wf)
        }
    };
    Ok(Arc::new(dm.map_err(|e| anyhow::anyhow!("discretization: {e}"))?))
}

fn build_sim(spec: &SimSpec) -> Result<SimConfig> {
    let scheme = match spec.scheme.as_deref() {
        None | Some("exact-ou-euler") => Scheme::ExactOuEuler,
        Some("full-euler") => Scheme::FullEuler,
        Some(other) => bail!(
            "sim.scheme: unknown scheme '{other}', expected exact-ou-euler or full-euler"
        ),
    };
    let sim = SimConfig {
        t_horizon: spec.t_horizon,
        dt: spec.dt,
        n_paths: spec.n_paths,
        seed: spec.seed,
        scheme,
    };
    sim.steps()
        .map_err(|e| anyhow::anyhow!("sim: {e} (fields sim.dt, sim.t_horizon)"))?;
    Ok(sim)
}

/// Re-check every constraint and assemble library objects.
pub fn build(cfg: &RunConfig) -> Result<Built> {
    let kernel = build_kernel(&cfg.kernel)?;
    let dm = build_measure(cfg, &kernel)?;
    let coeffs = build_coefficients(cfg.coefficients.as_ref())?;
    let sim = build_sim(&cfg.sim)?;

    let coupling = cfg.coupling.clone().unwrap_or_default();
    if cfg.coupling.is_some()
        && !matches!(cfg.experiment, Experiment::Couple | Experiment::Harnack)
    {
        bail!(
            "coupling: only applies to the couple and harnack experiments, not '{}'",
            cfg.experiment.as_str()
        );
    }
    let distance = coupling.distance.unwrap_or(1.0);
    if !(distance.is_finite() && distance >= 0.0) {
        bail!("coupling.distance: must be finite and ≥ 0, got {distance}");
    }
    if let Some(times) = &coupling.record_times {
        if times.is_empty() {
            bail!("coupling.record_times: must not be empty when given");
        }
        for &t in times {
            if !(t.is_finite() && t > 0.0 && t <= sim.t_horizon + 1e-12) {
                bail!("coupling.record_times: {t} lies outside (0, t_horizon]");
            }
        }
    }

    if cfg.experiment == Experiment::Gauss && (coeffs.n() != 1 || coeffs.d() != 1) {
        bail!(
            "coefficients: the gauss experiment requires scalar coefficients \
             (n = d = 1), got n = {}, d = {}",
            coeffs.n(),
            coeffs.d()
        );
    }

    Ok(Built {
        experiment: cfg.experiment,
        kernel,
        dm,
        coeffs,
        sim,
        distance,
        record_times: coupling.record_times,
        cap: coupling.cap,
    })
}
