//! Run configuration: JSON file, dotted-key overrides and resolution into
//! solver inputs.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::barrier::{self, Barrier, RatioScan, ScanSpec};
use crate::biot_savart::RegKernel;
use crate::model::{self, InitialDataKind, ModelParams, OddProfile};
use crate::quadrature::QuadratureSpec;
use crate::transport::{RunSettings, VelocityLaw};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub alpha: f64,
    /// Defaults to `γ/2`.
    #[serde(default)]
    pub p: Option<f64>,
    /// Defaults to `p`.
    #[serde(default)]
    pub q: Option<f64>,
    /// Defaults to `1.05` times the smallest admissible margin.
    #[serde(default)]
    pub margin_epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierConfig {
    pub a0: f64,
    /// Defaults to half the computed ratio constant.
    #[serde(default)]
    pub c0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDataConfig {
    pub kind: InitialDataKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", deny_unknown_fields)]
pub enum KernelConfig {
    Exact,
    Regularized { reg_epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        let s = QuadratureSpec::default();
        Self {
            rel_tol: s.rel_tol,
            abs_tol: s.abs_tol,
            max_subdivisions: s.max_subdivisions,
        }
    }
}

/// Everything a run needs. Optional fields are filled in by [`RunConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsConfig,
    pub barrier: BarrierConfig,
    pub initial_data: InitialDataConfig,
    pub n_particles: usize,
    pub x_max: f64,
    pub grading_power: f64,
    pub cfl: f64,
    pub dt_max: f64,
    /// Defaults to the barrier's singular time.
    #[serde(default)]
    pub t_end: Option<f64>,
    pub stop_slope: f64,
    pub snapshot_every: usize,
    pub kernel: KernelConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: ParamsConfig {
                alpha: 0.5,
                p: None,
                q: None,
                margin_epsilon: None,
            },
            barrier: BarrierConfig { a0: 0.5, c0: None },
            initial_data: InitialDataConfig {
                kind: InitialDataKind::BarrierMultiple,
            },
            n_particles: 1024,
            x_max: 50.0,
            grading_power: 3.0,
            cfl: 0.4,
            dt_max: 1e-2,
            t_end: None,
            stop_slope: 1e4,
            snapshot_every: 1,
            kernel: KernelConfig::Exact,
            quadrature: QuadratureConfig::default(),
            output_dir: PathBuf::from("run"),
        }
    }
}

/// Sets `path` (dot separated) in a JSON tree. Missing intermediate objects
/// are created; unknown leaves are caught later by deserialization.
pub fn apply_override(root: &mut Value, path: &str, raw: &str) -> anyhow::Result<()> {
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("malformed override key `{path}`");
    }
    let mut node = root;
    for k in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| anyhow!("override `{path}`: `{k}` is not inside an object"))?;
        node = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| anyhow!("override `{path}` does not address an object field"))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Parses `key=value`.
pub fn parse_override(s: &str) -> anyhow::Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("override `{s}` is not of the form key=value"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl RunConfig {
    /// Loads `path` (or the defaults) and applies overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut tree = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str::<Value>(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => serde_json::to_value(Self::default())?,
        };
        for o in overrides {
            let (k, v) = parse_override(o)?;
            apply_override(&mut tree, &k, &v)?;
        }
        let cfg: Self = serde_json::from_value(tree).context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.n_particles < 64 {
            bail!("n_particles = {} must be at least 64", self.n_particles);
        }
        if !(self.barrier.a0 > 0.0) {
            bail!("barrier.a0 = {} must be positive", self.barrier.a0);
        }
        if !(self.x_max >= 10.0 * self.barrier.a0) {
            bail!("x_max = {} must be at least 10 a0 = {}", self.x_max, 10.0 * self.barrier.a0);
        }
        if !(self.grading_power >= 1.0) {
            bail!("grading_power = {} must be at least 1", self.grading_power);
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            bail!("cfl = {} must lie in (0, 1)", self.cfl);
        }
        if !(self.dt_max > 0.0) {
            bail!("dt_max = {} must be positive", self.dt_max);
        }
        if !(self.stop_slope > 0.0) {
            bail!("stop_slope = {} must be positive", self.stop_slope);
        }
        if self.snapshot_every == 0 {
            bail!("snapshot_every must be positive");
        }
        if let Some(t) = self.t_end {
            if !(t > 0.0) {
                bail!("t_end = {t} must be positive");
            }
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        1.0 - self.params.alpha
    }

    pub fn quadrature_spec(&self) -> anyhow::Result<QuadratureSpec> {
        let spec = QuadratureSpec::default()
            .with_rel_tol(self.quadrature.rel_tol)
            .with_abs_tol(self.quadrature.abs_tol)
            .with_max_subdivisions(self.quadrature.max_subdivisions);
        spec.validate()?;
        Ok(spec)
    }

    pub fn model_params(&self) -> anyhow::Result<ModelParams> {
        let gamma = self.gamma();
        let p = self.params.p.unwrap_or(0.5 * gamma);
        let q = self.params.q.unwrap_or(p);
        let eps = match self.params.margin_epsilon {
            Some(e) => e,
            None => 1.05 * barrier::margin_epsilon_min(self.barrier.a0, p)?,
        };
        Ok(ModelParams::new(self.params.alpha, p, q, eps)?)
    }

    /// Computes what the config leaves open: the ratio scan (only when `c0`
    /// is missing), the barrier, the initial profile and solver settings.
    pub fn resolve(&self) -> anyhow::Result<ResolvedRun> {
        let params = self.model_params()?;
        let spec = self.quadrature_spec()?;
        let (c0, scan) = match self.barrier.c0 {
            Some(c0) => (c0, None),
            None => {
                let scan = barrier::compute_c(params.gamma, params.p, &ScanSpec::default(), &spec)?;
                (0.5 * scan.c_estimate, Some(scan))
            }
        };
        let barrier = Barrier::new(self.barrier.a0, c0, params.p)?;
        let nodes = model::graded_nodes(self.n_particles - 1, self.x_max, self.grading_power);
        let initial = model::build_initial_data(self.initial_data.kind, &params, &barrier, nodes)?;
        let t_end = self.t_end.unwrap_or(barrier.t_singular);
        let mut settings = RunSettings::new(params.gamma, params.p, self.x_max, t_end);
        settings.cfl = self.cfl;
        settings.dt_max = self.dt_max;
        settings.stop_slope = self.stop_slope;
        settings.snapshot_every = self.snapshot_every;
        settings.spec = spec;
        settings.law = match self.kernel {
            KernelConfig::Exact => VelocityLaw::Exact,
            KernelConfig::Regularized { reg_epsilon } => VelocityLaw::Regularized(RegKernel::new(reg_epsilon, params.gamma)?),
        };
        settings.barrier = Some(barrier);
        // Zero data is a stationary solution below any barrier; keep logging
        // the barrier but do not stop on it.
        settings.stop_on_barrier = self.initial_data.kind != InitialDataKind::Zero;
        Ok(ResolvedRun {
            config: self.clone(),
            params,
            barrier,
            scan,
            initial,
            settings,
        })
    }
}

/// A config together with every derived quantity a run uses.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub params: ModelParams,
    pub barrier: Barrier,
    pub scan: Option<RatioScan>,
    pub initial: OddProfile,
    pub settings: RunSettings,
}

impl ResolvedRun {
    /// The config with every optional field made explicit.
    pub fn explicit_config(&self) -> RunConfig {
        let mut c = self.config.clone();
        c.params.p = Some(self.params.p);
        c.params.q = Some(self.params.q);
        c.params.margin_epsilon = Some(self.params.margin_epsilon);
        c.barrier.c0 = Some(self.barrier.c0);
        c.t_end = Some(self.settings.t_end);
        c
    }
}
