//! JSON-configured scenarios: validation with field paths, execution of the
//! steering, Benamou–Brenier, diagnostic, complexity and flow-program
//! pipelines, and atomic writing of `report.json` / `trajectories.csv`.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::complexity::{
    self, ComplexityReport, FlowProgram, FlowStep, Generator, ManifoldSpec, Scaling,
};
use crate::diffeo::{self, DensitySpec, DiffeoSpec, MonotonicityVerdict};
use crate::error::{Error, Result};
use crate::liouville::{self, SimulationOptions, TrajectoryBundle};
use crate::lti::{self, ControllabilityReport, LtiSystem};
use crate::matops::{Matrix, Vector};
use crate::steer::{self, DiagnosticRow, InjectivityReport, SteeringPlan};
use crate::tolerance::Tolerances;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const DEFAULT_ENSEMBLE_SIZE: usize = 1000;
pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_ENDPOINT_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_RECORD_STRIDE: usize = 10;
pub const GRAMIAN_TABLE_INTERVALS: usize = 100;
pub const STRAIGHT_LINE_TOLERANCE: f64 = 1e-6;
pub const TRANSPORT_COST_TOLERANCE: f64 = 1e-3;
pub const RADIUS_SLACK: f64 = 1e-9;
pub const SCHEDULE_TOLERANCE: f64 = 1e-8;

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Steer,
    BenamouBrenier,
    Diagnostic,
    Complexity,
    FlowProgram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffeo: Option<DiffeoConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Every `record_stride`-th node goes to the CSV (the last always does).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<DiagnosticConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complexity: Option<ComplexityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_program: Option<FlowProgramConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

/// Either a preset (`double_integrator`, `integrator` with `dim`) or explicit
/// `a` (n×n) and `b` (n×m) given as rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffeoConfig {
    Identity,
    Linear {
        matrix: Rows,
    },
    Affine {
        matrix: Rows,
        offset: Vec<f64>,
    },
    Translation {
        offset: Vec<f64>,
    },
    /// `z ↦ z + α·tanh(z)` coordinatewise.
    TanhShift {
        alpha: f64,
    },
    /// Brenier map between two Gaussians; the source defaults to `N(0, I)`.
    BrenierGaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean0: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cov0: Option<Rows>,
        mean1: Vec<f64>,
        cov1: Rows,
    },
    Compose {
        outer: Box<DiffeoConfig>,
        inner: Box<DiffeoConfig>,
    },
    /// `map` is read as `ψ̂`; the steered map is its preimage under the hat transform.
    FromHat {
        map: Box<DiffeoConfig>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    StandardNormal,
    Gaussian { mean: Vec<f64>, cov: Rows },
    Mixture { components: Vec<MixtureComponent> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Rows,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub pairs: usize,
    pub times: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { pairs: 1000, times: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticConfig {
    pub grid: usize,
}

impl Default for DiagnosticConfig {
    fn default() -> Self {
        Self { grid: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityConfig {
    pub manifold: ManifoldConfig,
    pub r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_per_fragment: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifoldConfig {
    Named(String),
    Explicit {
        name: String,
        intrinsic_dim: usize,
        ambient_dim: usize,
        volume: f64,
        reach: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowProgramConfig {
    pub dim: usize,
    pub generators: Vec<GeneratorConfig>,
    pub steps: Vec<FlowStepConfig>,
    /// Points to push through the program; if absent, `n_points` are drawn
    /// uniformly from `[-half_width, half_width]^dim`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    /// Control channels of the switched system; defaults to the generator count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_controls: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    /// `∂θ` in the angle coordinate of the circle.
    Angular,
    Linear { matrix: Rows },
    Constant { vector: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowStepConfig {
    pub field: usize,
    pub scaling: ScalingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalingConfig {
    Constant { value: f64 },
    Affine { weights: Vec<f64>, offset: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    pub path: String,
    pub reason: String,
}

/// Every problem found in a config, each tagged with the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            let path = if issue.path.is_empty() { "<root>" } else { &issue.path };
            write!(f, "{path}: {}", issue.reason)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

impl From<ConfigErrors> for Error {
    fn from(e: ConfigErrors) -> Self {
        Error::Invalid(format!("invalid config: {e}"))
    }
}

/// Parses and validates a JSON scenario config.
pub fn validate_config(raw: &str) -> std::result::Result<ScenarioConfig, ConfigErrors> {
    let de = &mut serde_json::Deserializer::from_str(raw);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigErrors(vec![ConfigIssue {
            path: if path == "." { String::new() } else { path },
            reason: e.into_inner().to_string(),
        }])
    })?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Default)]
struct Issues(Vec<ConfigIssue>);

impl Issues {
    fn push(&mut self, path: impl Into<String>, reason: impl Into<String>) {
        self.0.push(ConfigIssue {
            path: path.into(),
            reason: reason.into(),
        });
    }

    fn require<'a, T>(&mut self, value: &'a Option<T>, path: &str, kind: ScenarioKind) -> Option<&'a T> {
        if value.is_none() {
            self.push(path, format!("required for scenario {}", kind_name(kind)));
        }
        value.as_ref()
    }

    fn positive(&mut self, v: f64, path: &str) {
        if !(v.is_finite() && v > 0.0) {
            self.push(path, format!("must be finite and positive, got {v}"));
        }
    }

    /// Checks a rectangular finite matrix, optionally of a fixed shape.
    fn matrix(&mut self, rows: &Rows, path: &str, shape: (Option<usize>, Option<usize>)) -> Option<(usize, usize)> {
        let r = rows.len();
        if r == 0 {
            self.push(path, "matrix has no rows");
            return None;
        }
        let c = rows[0].len();
        if c == 0 {
            self.push(path, "matrix has no columns");
            return None;
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                self.push(format!("{path}[{i}]"), format!("row has {} entries, expected {c}", row.len()));
                return None;
            }
            if row.iter().any(|v| !v.is_finite()) {
                self.push(format!("{path}[{i}]"), "entries must be finite");
                return None;
            }
        }
        if let Some(er) = shape.0 {
            if r != er {
                self.push(path, format!("expected {er} rows, got {r}"));
                return None;
            }
        }
        if let Some(ec) = shape.1 {
            if c != ec {
                self.push(path, format!("expected {ec} columns, got {c}"));
                return None;
            }
        }
        Some((r, c))
    }

    fn vector(&mut self, v: &[f64], path: &str, len: usize) {
        if v.len() != len {
            self.push(path, format!("expected {len} entries, got {}", v.len()));
        } else if v.iter().any(|x| !x.is_finite()) {
            self.push(path, "entries must be finite");
        }
    }

    fn finish(self) -> std::result::Result<(), ConfigErrors> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(self.0))
        }
    }
}

fn kind_name(kind: ScenarioKind) -> &'static str {
    match kind {
        ScenarioKind::Steer => "steer",
        ScenarioKind::BenamouBrenier => "benamou_brenier",
        ScenarioKind::Diagnostic => "diagnostic",
        ScenarioKind::Complexity => "complexity",
        ScenarioKind::FlowProgram => "flow_program",
    }
}

impl ScenarioConfig {
    /// Semantic checks that serde cannot express: required blocks, shapes,
    /// ranges. Returns all problems at once.
    pub fn validate(&self) -> std::result::Result<(), ConfigErrors> {
        let mut issues = Issues::default();
        let kind = self.scenario;
        match kind {
            ScenarioKind::Steer | ScenarioKind::BenamouBrenier | ScenarioKind::Diagnostic => {
                let n = self.require_system(&mut issues, kind);
                if let Some(&t) = issues.require(&self.horizon, "horizon", kind) {
                    issues.positive(t, "horizon");
                }
                let needs_diffeo = kind != ScenarioKind::Diagnostic;
                if needs_diffeo {
                    issues.require(&self.diffeo, "diffeo", kind);
                }
                if let (Some(n), Some(d)) = (n, &self.diffeo) {
                    check_diffeo(&mut issues, d, "diffeo", n);
                }
                if kind != ScenarioKind::Diagnostic {
                    if let (Some(n), Some(d)) = (n, &self.density) {
                        check_density(&mut issues, d, "density", n);
                    }
                    if self.ensemble_size == Some(0) {
                        issues.push("ensemble_size", "must be at least 1");
                    }
                    if let (Some(step), Some(t)) = (self.step, self.horizon) {
                        if !(step.is_finite() && step > 0.0 && step <= t / 10.0) {
                            issues.push("step", format!("must lie in (0, horizon/10], got {step}"));
                        }
                    }
                    if self.record_stride == Some(0) {
                        issues.push("record_stride", "must be at least 1");
                    }
                    if let Some(tol) = self.endpoint_tolerance {
                        issues.positive(tol, "endpoint_tolerance");
                    }
                }
                if kind == ScenarioKind::Steer {
                    if let Some(p) = &self.probe {
                        if p.pairs > 0 && p.times == 0 {
                            issues.push("probe.times", "must be at least 1 when pairs > 0");
                        }
                    }
                }
                if kind == ScenarioKind::BenamouBrenier {
                    if let (Some(_), Ok(sys)) = (n, self.build_system()) {
                        if !sys.is_pure_integrator() {
                            issues.push("system", "benamou_brenier requires A = 0 and B = I");
                        }
                    }
                }
                if let Some(d) = &self.diagnostic {
                    if d.grid < 2 {
                        issues.push("diagnostic.grid", "must be at least 2");
                    }
                }
            }
            ScenarioKind::Complexity => {
                if let Some(c) = issues.require(&self.complexity, "complexity", kind) {
                    check_complexity(&mut issues, c);
                }
            }
            ScenarioKind::FlowProgram => {
                if let Some(f) = issues.require(&self.flow_program, "flow_program", kind) {
                    check_flow_program(&mut issues, f);
                }
            }
        }
        issues.finish()
    }

    fn require_system(&self, issues: &mut Issues, kind: ScenarioKind) -> Option<usize> {
        let sys = issues.require(&self.system, "system", kind)?;
        match (&sys.preset, &sys.a, &sys.b) {
            (Some(p), None, None) => match p.as_str() {
                "double_integrator" => Some(2),
                "integrator" => match sys.dim {
                    Some(n) if n >= 1 => Some(n),
                    _ => {
                        issues.push("system.dim", "integrator preset needs dim >= 1");
                        None
                    }
                },
                other => {
                    issues.push(
                        "system.preset",
                        format!("unknown preset '{other}' (expected double_integrator or integrator)"),
                    );
                    None
                }
            },
            (None, Some(a), Some(b)) => {
                let (n, _) = issues.matrix(a, "system.a", (None, None))?;
                if issues.matrix(a, "system.a", (Some(n), Some(n))).is_none() {
                    return None;
                }
                issues.matrix(b, "system.b", (Some(n), None))?;
                Some(n)
            }
            _ => {
                issues.push("system", "give either preset or both a and b");
                None
            }
        }
    }

    pub fn build_system(&self) -> Result<LtiSystem> {
        let sys = self
            .system
            .as_ref()
            .ok_or_else(|| Error::Invalid("config has no system block".into()))?;
        match (&sys.preset, &sys.a, &sys.b) {
            (Some(p), _, _) if p == "double_integrator" => Ok(LtiSystem::double_integrator()),
            (Some(p), _, _) if p == "integrator" => Ok(LtiSystem::integrator(sys.dim.unwrap_or(1))),
            (None, Some(a), Some(b)) => LtiSystem::new(to_matrix(a), to_matrix(b)),
            _ => Err(Error::Invalid("system block needs a preset or both a and b".into())),
        }
    }

    fn output_config(&self) -> OutputConfig {
        self.output.clone().unwrap_or(OutputConfig {
            dir: None,
            report: None,
            trajectories: None,
        })
    }
}

fn check_diffeo(issues: &mut Issues, d: &DiffeoConfig, path: &str, n: usize) {
    let sq = (Some(n), Some(n));
    match d {
        DiffeoConfig::Identity => {}
        DiffeoConfig::Linear { matrix } => {
            issues.matrix(matrix, &format!("{path}.matrix"), sq);
        }
        DiffeoConfig::Affine { matrix, offset } => {
            issues.matrix(matrix, &format!("{path}.matrix"), sq);
            issues.vector(offset, &format!("{path}.offset"), n);
        }
        DiffeoConfig::Translation { offset } => issues.vector(offset, &format!("{path}.offset"), n),
        DiffeoConfig::TanhShift { alpha } => {
            if !(alpha.abs() < 1.0) {
                issues.push(format!("{path}.alpha"), format!("needs |alpha| < 1, got {alpha}"));
            }
        }
        DiffeoConfig::BrenierGaussian { mean0, cov0, mean1, cov1 } => {
            if let Some(m) = mean0 {
                issues.vector(m, &format!("{path}.mean0"), n);
            }
            if let Some(c) = cov0 {
                issues.matrix(c, &format!("{path}.cov0"), sq);
            }
            issues.vector(mean1, &format!("{path}.mean1"), n);
            issues.matrix(cov1, &format!("{path}.cov1"), sq);
        }
        DiffeoConfig::Compose { outer, inner } => {
            check_diffeo(issues, outer, &format!("{path}.outer"), n);
            check_diffeo(issues, inner, &format!("{path}.inner"), n);
        }
        DiffeoConfig::FromHat { map } => check_diffeo(issues, map, &format!("{path}.map"), n),
    }
}

fn check_density(issues: &mut Issues, d: &DensityConfig, path: &str, n: usize) {
    match d {
        DensityConfig::StandardNormal => {}
        DensityConfig::Gaussian { mean, cov } => {
            issues.vector(mean, &format!("{path}.mean"), n);
            issues.matrix(cov, &format!("{path}.cov"), (Some(n), Some(n)));
        }
        DensityConfig::Mixture { components } => {
            if components.is_empty() {
                issues.push(format!("{path}.components"), "mixture needs at least one component");
            }
            for (i, c) in components.iter().enumerate() {
                let p = format!("{path}.components[{i}]");
                issues.positive(c.weight, &format!("{p}.weight"));
                issues.vector(&c.mean, &format!("{p}.mean"), n);
                issues.matrix(&c.cov, &format!("{p}.cov"), (Some(n), Some(n)));
            }
        }
    }
}

fn check_complexity(issues: &mut Issues, c: &ComplexityConfig) {
    let manifold = match build_manifold(&c.manifold) {
        Ok(m) => m,
        Err(e) => {
            issues.push("complexity.manifold", e.to_string());
            return;
        }
    };
    if !(c.r.is_finite() && c.r > 0.0) {
        issues.push("complexity.r", format!("must be finite and positive, got {}", c.r));
    } else if c.r >= manifold.reach {
        issues.push(
            "complexity.r",
            format!("r = {} must be below the reach τ = {} of {}", c.r, manifold.reach, manifold.name),
        );
    }
    if let Some(k) = c.k_per_fragment {
        if k < manifold.intrinsic_dim {
            issues.push(
                "complexity.k_per_fragment",
                format!("must be at least the intrinsic dimension {}", manifold.intrinsic_dim),
            );
        }
    }
}

fn check_flow_program(issues: &mut Issues, f: &FlowProgramConfig) {
    if f.dim == 0 {
        issues.push("flow_program.dim", "must be at least 1");
        return;
    }
    let n = f.dim;
    for (i, g) in f.generators.iter().enumerate() {
        let p = format!("flow_program.generators[{i}]");
        match g {
            GeneratorConfig::Angular => {
                if n != 1 {
                    issues.push(p, "the angular generator lives on the circle (dim 1)");
                }
            }
            GeneratorConfig::Linear { matrix } => {
                issues.matrix(matrix, &format!("{p}.matrix"), (Some(n), Some(n)));
            }
            GeneratorConfig::Constant { vector } => issues.vector(vector, &format!("{p}.vector"), n),
        }
    }
    let m = f.m_controls.unwrap_or(f.generators.len());
    for (k, s) in f.steps.iter().enumerate() {
        let p = format!("flow_program.steps[{k}]");
        if s.field >= f.generators.len() {
            issues.push(
                format!("{p}.field"),
                format!("index {} out of range for {} generators", s.field, f.generators.len()),
            );
        } else if s.field >= m {
            issues.push(format!("{p}.field"), format!("index {} out of range for {m} control channels", s.field));
        }
        match &s.scaling {
            ScalingConfig::Constant { value } => {
                if !value.is_finite() {
                    issues.push(format!("{p}.scaling.value"), "must be finite");
                }
            }
            ScalingConfig::Affine { weights, offset } => {
                issues.vector(weights, &format!("{p}.scaling.weights"), n);
                if !offset.is_finite() {
                    issues.push(format!("{p}.scaling.offset"), "must be finite");
                }
            }
        }
    }
    if let Some(points) = &f.points {
        for (i, x) in points.iter().enumerate() {
            issues.vector(x, &format!("flow_program.points[{i}]"), n);
        }
    }
    if let Some(h) = f.half_width {
        issues.positive(h, "flow_program.half_width");
    }
    if let Some(step) = f.step {
        if !(step.is_finite() && step > 0.0 && step <= 1.0) {
            issues.push("flow_program.step", format!("must lie in (0, 1], got {step}"));
        }
    }
}

fn to_matrix(rows: &Rows) -> Matrix {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    Matrix::from_fn(r, c, |i, j| rows[i][j])
}

fn to_vector(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

pub fn build_diffeo(d: &DiffeoConfig, sys: &LtiSystem, horizon: f64) -> Result<DiffeoSpec> {
    let n = sys.state_dim();
    match d {
        DiffeoConfig::Identity => Ok(DiffeoSpec::identity(n)),
        DiffeoConfig::Linear { matrix } => Ok(DiffeoSpec::linear(to_matrix(matrix))),
        DiffeoConfig::Affine { matrix, offset } => DiffeoSpec::affine(to_matrix(matrix), to_vector(offset)),
        DiffeoConfig::Translation { offset } => Ok(DiffeoSpec::translation(to_vector(offset))),
        DiffeoConfig::TanhShift { alpha } => DiffeoSpec::tanh_shift(n, *alpha),
        DiffeoConfig::BrenierGaussian { mean0, cov0, mean1, cov1 } => {
            let m0 = mean0.as_deref().map_or_else(|| Vector::zeros(n), to_vector);
            let s0 = cov0.as_ref().map_or_else(|| Matrix::identity(n, n), to_matrix);
            diffeo::brenier_gaussian(&m0, &s0, &to_vector(mean1), &to_matrix(cov1))
        }
        DiffeoConfig::Compose { outer, inner } => DiffeoSpec::compose(
            &build_diffeo(outer, sys, horizon)?,
            &build_diffeo(inner, sys, horizon)?,
        ),
        DiffeoConfig::FromHat { map } => diffeo::inverse_hat_transform(&build_diffeo(map, sys, horizon)?, sys, horizon),
    }
}

pub fn build_density(d: Option<&DensityConfig>, n: usize) -> Result<DensitySpec> {
    match d {
        None | Some(DensityConfig::StandardNormal) => Ok(DensitySpec::standard_normal(n)),
        Some(DensityConfig::Gaussian { mean, cov }) => DensitySpec::gaussian(to_vector(mean), to_matrix(cov)),
        Some(DensityConfig::Mixture { components }) => DensitySpec::mixture(
            components
                .iter()
                .map(|c| (c.weight, to_vector(&c.mean), to_matrix(&c.cov)))
                .collect(),
        ),
    }
}

pub fn build_manifold(m: &ManifoldConfig) -> Result<ManifoldSpec> {
    match m {
        ManifoldConfig::Named(name) => ManifoldSpec::by_name(name),
        ManifoldConfig::Explicit {
            name,
            intrinsic_dim,
            ambient_dim,
            volume,
            reach,
        } => ManifoldSpec::new(name.clone(), *intrinsic_dim, *ambient_dim, *volume, *reach),
    }
}

pub fn build_flow_program(f: &FlowProgramConfig) -> Result<FlowProgram> {
    let generators = f
        .generators
        .iter()
        .map(|g| match g {
            GeneratorConfig::Angular => Generator::angular(),
            GeneratorConfig::Linear { matrix } => Generator::Linear(to_matrix(matrix)),
            GeneratorConfig::Constant { vector } => Generator::Constant(to_vector(vector)),
        })
        .collect();
    let steps = f
        .steps
        .iter()
        .map(|s| FlowStep {
            field: s.field,
            scaling: match &s.scaling {
                ScalingConfig::Constant { value } => Scaling::Constant(*value),
                ScalingConfig::Affine { weights, offset } => Scaling::Affine {
                    weights: to_vector(weights),
                    offset: *offset,
                },
            },
        })
        .collect();
    FlowProgram::new(f.dim, generators, steps)
}

/// A pass/fail check that decides the exit status.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardCheck {
    pub name: String,
    pub value: f64,
    /// `"<="` or `">="`.
    pub relation: String,
    pub limit: f64,
    pub passed: bool,
}

impl HardCheck {
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: "<=".into(),
            limit,
            passed: value <= limit,
        }
    }

    fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: ">=".into(),
            limit,
            passed: value >= limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GramianSummary {
    pub intervals: usize,
    pub min_increment_eigenvalue: f64,
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndpointSummary {
    pub max: f64,
    pub mean: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub tolerance: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportSummary {
    /// `½∫Σw|u|²dt` along the simulated trajectories.
    pub simulated: f64,
    /// `½ E|ψ(x₀) − x₀|² / T` over the same ensemble.
    pub monte_carlo: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSummary {
    pub program_length: usize,
    pub switching_count: usize,
    pub total_time: f64,
    pub n_points: usize,
    pub step: f64,
    pub max_schedule_discrepancy: f64,
    pub images: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub version: String,
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub passed: bool,
    pub hard_checks: Vec<HardCheck>,
    /// Soft findings (e.g. an uncertified `ψ̂`); never affect `passed`.
    pub warnings: Vec<String>,
    pub config: ScenarioConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controllability: Option<ControllabilityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gramian_table: Option<GramianSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monotonicity: Option<MonotonicityVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<EndpointSummary>,
    /// Max endpoint error when particle 0's open-loop signal is applied to
    /// every particle: one open-loop input cannot steer a whole ensemble.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub open_loop_endpoint_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub injectivity: Option<InjectivityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transport_cost: Option<TransportSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub straight_line_deviation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Vec<DiagnosticRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub complexity: Option<ComplexityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowSummary>,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    fn new(cfg: &ScenarioConfig) -> Self {
        Self {
            version: VERSION.into(),
            scenario: cfg.scenario,
            seed: cfg.seed,
            passed: true,
            hard_checks: Vec::new(),
            warnings: Vec::new(),
            config: cfg.clone(),
            controllability: None,
            gramian_table: None,
            monotonicity: None,
            endpoint: None,
            open_loop_endpoint_max: None,
            injectivity: None,
            energy_distance: None,
            transport_cost: None,
            straight_line_deviation: None,
            diagnostics: None,
            complexity: None,
            flow: None,
            wall_clock_seconds: 0.0,
        }
    }

    fn check(&mut self, c: HardCheck) {
        self.passed &= c.passed;
        self.hard_checks.push(c);
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| Error::Invalid(format!("cannot serialize report: {e}")))
    }
}

/// Report plus the simulated trajectories, before anything is written.
pub struct ScenarioResult {
    pub report: RunReport,
    pub trajectories: Option<TrajectoryBundle>,
}

fn context(kind: ScenarioKind) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Invalid(msg) => Error::Invalid(format!("{} scenario: {msg}", kind_name(kind))),
        other => other,
    }
}

/// Runs the scenario in memory. Parallel sections use the current rayon pool.
pub fn execute(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut report = RunReport::new(cfg);
    let trajectories = match cfg.scenario {
        ScenarioKind::Steer => run_steer(cfg, &mut report, false),
        ScenarioKind::BenamouBrenier => run_steer(cfg, &mut report, true),
        ScenarioKind::Diagnostic => run_diagnostic(cfg, &mut report).map(|_| None),
        ScenarioKind::Complexity => run_complexity(cfg, &mut report).map(|_| None),
        ScenarioKind::FlowProgram => run_flow(cfg, &mut report).map(|_| None),
    }
    .map_err(context(cfg.scenario))?;
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(ScenarioResult { report, trajectories })
}

fn build_plan(cfg: &ScenarioConfig, report: &mut RunReport) -> Result<SteeringPlan> {
    let sys = cfg.build_system()?;
    let horizon = cfg.horizon.expect("validated");
    let psi = match &cfg.diffeo {
        Some(d) => build_diffeo(d, &sys, horizon)?,
        None => DiffeoSpec::identity(sys.state_dim()),
    };
    let tol = Tolerances::default();
    let table = lti::gramian_table(&sys, horizon, GRAMIAN_TABLE_INTERVALS)?;
    let min_inc = table.min_increment_eigenvalue();
    let monotone = table.is_monotone(tol.gramian_monotone);
    report.gramian_table = Some(GramianSummary {
        intervals: GRAMIAN_TABLE_INTERVALS,
        min_increment_eigenvalue: min_inc,
        monotone,
    });
    report.check(HardCheck::at_least("gramian_psd_monotone", min_inc, -tol.gramian_monotone));
    let plan = steer::make_plan_with(&sys, horizon, psi, tol)?;
    report.controllability = Some(plan.controllability);
    report.monotonicity = Some(plan.certificate.clone());
    if !plan.monotone_certified {
        report
            .warnings
            .push("ψ̂ failed the sampled monotonicity certificate; K_t may not be injective".into());
    }
    Ok(plan)
}

fn run_steer(cfg: &ScenarioConfig, report: &mut RunReport, dynamic_ot: bool) -> Result<Option<TrajectoryBundle>> {
    let plan = build_plan(cfg, report)?;
    let n = plan.state_dim();
    let rho = build_density(cfg.density.as_ref(), n)?;
    let size = cfg.ensemble_size.unwrap_or(DEFAULT_ENSEMBLE_SIZE);
    let ens = liouville::sample_ensemble(&rho, size, cfg.seed)?;
    let opts = SimulationOptions {
        step: cfg.step.unwrap_or(DEFAULT_STEP.min(plan.horizon / 10.0)),
        record_stride: cfg.record_stride.unwrap_or(DEFAULT_RECORD_STRIDE),
    };
    let bundle = liouville::simulate_closed_loop_with(&plan, &ens, opts)?;
    let stats = liouville::endpoint_error(&bundle, &plan.psi);
    let tol = cfg.endpoint_tolerance.unwrap_or(DEFAULT_ENDPOINT_TOLERANCE);
    report.check(HardCheck::at_most("failed_particles", stats.n_failed as f64, 0.0));
    report.check(HardCheck::at_most("endpoint_max_error", stats.max, tol));
    report.endpoint = Some(EndpointSummary {
        max: stats.max,
        mean: stats.mean,
        n_ok: stats.n_ok,
        n_failed: stats.n_failed,
        tolerance: tol,
        step: bundle.step,
    });

    let target = ens.push_forward(&plan.psi);
    let terminal = bundle.terminal_ensemble(cfg.seed)?;
    report.energy_distance = Some(liouville::energy_distance(&terminal, &target)?);

    if dynamic_ot {
        let deviation = liouville::straight_line_check(&bundle)?;
        report.straight_line_deviation = Some(deviation);
        report.check(HardCheck::at_most("straight_line_deviation", deviation, STRAIGHT_LINE_TOLERANCE));
        let simulated = liouville::transport_cost(&bundle);
        let mc = monte_carlo_cost(&ens, &plan);
        let rel = if mc > 0.0 { (simulated - mc).abs() / mc } else { simulated.abs() };
        report.transport_cost = Some(TransportSummary {
            simulated,
            monte_carlo: mc,
            relative_error: rel,
        });
        report.check(HardCheck::at_most("transport_cost_relative_error", rel, TRANSPORT_COST_TOLERANCE));
    } else {
        let probe = cfg.probe.unwrap_or_default();
        if probe.pairs > 0 {
            let times: Vec<f64> = (1..=probe.times)
                .map(|i| plan.horizon * i as f64 / (probe.times + 1) as f64)
                .collect();
            let inj = steer::injectivity_probe(&plan, probe.pairs, &times, cfg.seed)?;
            if !(inj.min_bilinear > 0.0) {
                report.warnings.push(format!(
                    "injectivity form reached {:e}; K_t is not certified injective",
                    inj.min_bilinear
                ));
            }
            report.injectivity = Some(inj);
        }
        if let Some(x0) = ens.positions.first() {
            let open = liouville::simulate_open_loop(&plan, &ens, x0, opts.step)?;
            report.open_loop_endpoint_max = Some(liouville::endpoint_error(&open, &plan.psi).max);
        }
    }
    Ok(Some(bundle))
}

/// `½ Σ wᵢ |ψ(xᵢ) − xᵢ|² / T`: the cost of straight-line transport at
/// constant speed over the horizon.
fn monte_carlo_cost(ens: &liouville::ParticleEnsemble, plan: &SteeringPlan) -> f64 {
    let terms: Vec<f64> = ens
        .positions
        .iter()
        .zip(&ens.weights)
        .map(|(x, w)| w * (plan.psi.eval(x) - x).norm_squared())
        .collect();
    0.5 * liouville::compensated_sum(&terms) / plan.horizon
}

fn run_diagnostic(cfg: &ScenarioConfig, report: &mut RunReport) -> Result<()> {
    let plan = build_plan(cfg, report)?;
    let grid_n = cfg.diagnostic.unwrap_or_default().grid;
    let grid: Vec<f64> = (1..=grid_n).map(|i| plan.horizon * i as f64 / grid_n as f64).collect();
    let rows = steer::norm_vs_radius_diagnostic(&plan, &grid)?;
    let max_radius = rows.iter().map(|r| r.radius).fold(0.0, f64::max);
    report.check(HardCheck::at_most("max_spectral_radius", max_radius, 1.0 + RADIUS_SLACK));
    if rows.iter().any(|r| r.norm > 1.0 + RADIUS_SLACK) {
        report
            .warnings
            .push("‖W(0,t)W(0,T)⁻¹‖ exceeds 1 on the grid; the operator norm is not a valid contraction bound".into());
    }
    report.diagnostics = Some(rows);
    Ok(())
}

fn run_complexity(cfg: &ScenarioConfig, report: &mut RunReport) -> Result<()> {
    let c = cfg.complexity.as_ref().expect("validated");
    let m = build_manifold(&c.manifold)?;
    let k = c.k_per_fragment.unwrap_or(m.intrinsic_dim);
    report.complexity = Some(complexity::complexity_report(&m, c.r, k)?);
    Ok(())
}

fn run_flow(cfg: &ScenarioConfig, report: &mut RunReport) -> Result<()> {
    let f = cfg.flow_program.as_ref().expect("validated");
    let prog = build_flow_program(f)?;
    let m = f.m_controls.unwrap_or(f.generators.len());
    let schedule = complexity::flow_program_to_schedule(&prog, m)?;
    let step = f.step.unwrap_or(complexity::DEFAULT_FLOW_STEP);
    let points: Vec<Vector> = match &f.points {
        Some(p) => p.iter().map(|x| to_vector(x)).collect(),
        None => {
            let half = f.half_width.unwrap_or(2.0);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..f.n_points.unwrap_or(100))
                .map(|_| Vector::from_fn(f.dim, |_, _| rng.random_range(-half..=half)))
                .collect()
        }
    };
    let mut images = Vec::with_capacity(points.len());
    let mut discrepancy = 0.0f64;
    for x in &points {
        let y = complexity::flow_program_apply(&prog, x, step)?;
        let z = schedule.simulate(x, step)?;
        discrepancy = discrepancy.max((&y - &z).norm());
        images.push(y.iter().copied().collect());
    }
    report.check(HardCheck::at_most("schedule_discrepancy", discrepancy, SCHEDULE_TOLERANCE));
    report.check(HardCheck::at_most(
        "switching_count_mismatch",
        (schedule.switching_count() as f64 - prog.len() as f64).abs(),
        0.0,
    ));
    report.flow = Some(FlowSummary {
        program_length: prog.len(),
        switching_count: schedule.switching_count(),
        total_time: schedule.total_time(),
        n_points: points.len(),
        step,
        max_schedule_discrepancy: discrepancy,
        images,
    });
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output.dir` from the config.
    pub out_dir: Option<PathBuf>,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub report_path: PathBuf,
    pub trajectories_path: Option<PathBuf>,
}

/// Executes the scenario and writes `report.json` (and `trajectories.csv`
/// for simulating scenarios). Files are written to a temporary name and
/// renamed; if any write fails, files already written by this run are removed.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let result = match opts.threads {
        Some(0) => return Err(Error::Invalid("thread count must be at least 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Invalid(format!("cannot build thread pool: {e}")))?
            .install(|| execute(cfg))?,
        None => execute(cfg)?,
    };
    let out = cfg.output_config();
    let dir = opts
        .out_dir
        .clone()
        .or_else(|| out.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("densteer-out"));
    fs::create_dir_all(&dir)?;
    let report_path = dir.join(out.report.as_deref().unwrap_or("report.json"));
    let csv_path = dir.join(out.trajectories.as_deref().unwrap_or("trajectories.csv"));

    let mut written: Vec<PathBuf> = Vec::new();
    let outcome = (|| -> Result<Option<PathBuf>> {
        let mut csv = None;
        if let Some(bundle) = &result.trajectories {
            write_atomic(&csv_path, |w| bundle.write_csv(w))?;
            written.push(csv_path.clone());
            csv = Some(csv_path.clone());
        }
        let json = result.report.to_json()?;
        write_atomic(&report_path, |w| Ok(w.write_all(json.as_bytes())?))?;
        Ok(csv)
    })();
    match outcome {
        Ok(trajectories_path) => Ok(RunOutcome {
            report: result.report,
            report_path,
            trajectories_path,
        }),
        Err(e) => {
            for p in written {
                let _ = fs::remove_file(p);
            }
            Err(e)
        }
    }
}

fn write_atomic(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Invalid(format!("output path {} has no file name", path.display())))?
        .to_string_lossy()
        .into_owned();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let res = (|| -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        body(&mut w)?;
        let file = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        file.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steer_json(extra: &str) -> String {
        format!(
            r#"{{"scenario": "steer", "system": {{"preset": "double_integrator"}}, "horizon": 1.0,
                "diffeo": {{"kind": "identity"}}{extra}}}"#
        )
    }

    #[test]
    fn minimal_steer_config_is_accepted() {
        let cfg = validate_config(&steer_json("")).unwrap();
        assert_eq!(cfg.scenario, ScenarioKind::Steer);
        assert_eq!(cfg.build_system().unwrap(), LtiSystem::double_integrator());
    }

    #[test]
    fn wrong_b_rows_is_rejected_with_path() {
        let raw = r#"{"scenario": "steer", "horizon": 1.0, "diffeo": {"kind": "identity"},
            "system": {"a": [[0, 1], [0, 0]], "b": [[0], [1], [2]]}}"#;
        let err = validate_config(raw).unwrap_err();
        assert_eq!(err.0[0].path, "system.b");
        assert!(err.0[0].reason.contains("expected 2 rows"), "{err}");
    }

    #[test]
    fn radius_past_reach_is_rejected() {
        let raw = r#"{"scenario": "complexity", "complexity": {"manifold": {"name": "m", "intrinsic_dim": 2,
            "ambient_dim": 3, "volume": 12.566, "reach": 1.0}, "r": 1.5}}"#;
        let err = validate_config(raw).unwrap_err();
        assert_eq!(err.0[0].path, "complexity.r");
        assert!(err.0[0].reason.contains("reach"), "{err}");
    }

    #[test]
    fn unknown_diffeo_kind_is_rejected() {
        let err = validate_config(&steer_json("").replace("identity", "swirl")).unwrap_err();
        assert!(err.0[0].path.starts_with("diffeo"), "{err}");
        assert!(err.0[0].reason.contains("swirl"), "{err}");
    }

    #[test]
    fn several_problems_are_reported_together() {
        let raw = r#"{"scenario": "steer", "system": {"preset": "double_integrator"}, "horizon": -1,
            "diffeo": {"kind": "affine", "matrix": [[1, 0, 0]], "offset": [0]}}"#;
        let err = validate_config(raw).unwrap_err();
        let paths: Vec<&str> = err.0.iter().map(|i| i.path.as_str()).collect();
        assert!(paths.contains(&"horizon"));
        assert!(paths.contains(&"diffeo.matrix"));
        assert!(paths.contains(&"diffeo.offset"));
    }

    #[test]
    fn missing_blocks_and_bad_presets() {
        let err = validate_config(r#"{"scenario": "steer"}"#).unwrap_err();
        let paths: Vec<&str> = err.0.iter().map(|i| i.path.as_str()).collect();
        assert_eq!(paths, ["system", "horizon", "diffeo"]);
        let err = validate_config(&steer_json("").replace("double_integrator", "pendulum")).unwrap_err();
        assert_eq!(err.0[0].path, "system.preset");
        let err = validate_config(&steer_json(r#", "extra": 1"#)).unwrap_err();
        assert!(err.0[0].reason.contains("extra"));
        assert!(validate_config("{not json").is_err());
    }

    #[test]
    fn benamou_brenier_needs_pure_integrator() {
        let raw = r#"{"scenario": "benamou_brenier", "system": {"preset": "double_integrator"},
            "horizon": 1.0, "diffeo": {"kind": "identity"}}"#;
        let err = validate_config(raw).unwrap_err();
        assert_eq!(err.0[0].path, "system");
    }

    #[test]
    fn flow_program_indices_are_checked() {
        let raw = r#"{"scenario": "flow_program", "flow_program": {"dim": 1,
            "generators": [{"kind": "angular"}],
            "steps": [{"field": 1, "scaling": {"kind": "constant", "value": 0.2}}]}}"#;
        let err = validate_config(raw).unwrap_err();
        assert_eq!(err.0[0].path, "flow_program.steps[0].field");
    }

    #[test]
    fn complexity_scenario_values() {
        let raw = r#"{"scenario": "complexity", "complexity": {"manifold": "sphere", "r": 0.1, "k_per_fragment": 2}}"#;
        let cfg = validate_config(raw).unwrap();
        let res = execute(&cfg).unwrap();
        let c = res.report.complexity.unwrap();
        assert!((c.n_low - 3.125).abs() < 1e-12);
        assert!((c.k_low - 6.25).abs() < 1e-12);
        assert_eq!(c.k_estimate, 8.0);
        assert!(res.report.passed);
        assert!(res.trajectories.is_none());
    }

    #[test]
    fn flow_scenario_rotates_circle() {
        let raw = r#"{"scenario": "flow_program", "flow_program": {"dim": 1,
            "generators": [{"kind": "angular"}], "points": [[0.0], [1.0]],
            "steps": [{"field": 0, "scaling": {"kind": "constant", "value": 0.2}},
                      {"field": 0, "scaling": {"kind": "constant", "value": 0.3}}]}}"#;
        let res = execute(&validate_config(raw).unwrap()).unwrap();
        let f = res.report.flow.unwrap();
        assert_eq!(f.switching_count, 2);
        assert_eq!(f.total_time, 2.0);
        assert!((f.images[0][0] - 0.5).abs() < 1e-12);
        assert!((f.images[1][0] - 1.5).abs() < 1e-12);
        assert!(res.report.passed);
    }

    #[test]
    fn diagnostic_scenario_flags_norm_but_passes() {
        let raw = r#"{"scenario": "diagnostic", "system": {"preset": "double_integrator"}, "horizon": 1.0}"#;
        let res = execute(&validate_config(raw).unwrap()).unwrap();
        assert!(res.report.passed);
        assert!(!res.report.warnings.is_empty());
        let rows = res.report.diagnostics.unwrap();
        assert_eq!(rows.len(), 100);
    }

    #[test]
    fn uncertified_target_is_only_a_warning() {
        let cfg = validate_config(&steer_json(r#", "ensemble_size": 20, "step": 0.01, "probe": {"pairs": 50, "times": 4}"#)).unwrap();
        let res = execute(&cfg).unwrap();
        assert!(res.report.warnings.iter().any(|w| w.contains("monotonicity")));
        let ok_checks = res.report.hard_checks.iter().all(|c| c.passed);
        assert_eq!(res.report.passed, ok_checks);
    }

    #[test]
    fn outputs_are_written_and_failed_runs_leave_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let raw = r#"{"scenario": "benamou_brenier", "system": {"preset": "integrator", "dim": 2}, "horizon": 1.0,
            "diffeo": {"kind": "tanh_shift", "alpha": 0.5}, "ensemble_size": 10, "step": 0.05}"#;
        let cfg = validate_config(raw).unwrap();
        let out = run_scenario(
            &cfg,
            &RunOptions {
                out_dir: Some(dir.path().to_path_buf()),
                threads: Some(1),
            },
        )
        .unwrap();
        assert!(out.report.passed, "{:?}", out.report.hard_checks);
        let csv = fs::read_to_string(out.trajectories_path.unwrap()).unwrap();
        assert!(csv.starts_with("t,particle_id,x_0,x_1,u_0,u_1\n"));
        assert!(out.report_path.exists());
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 2, "{names:?}");

        // an uncontrollable system fails before anything is written
        let bad = r#"{"scenario": "steer", "system": {"a": [[0, 0], [0, 0]], "b": [[1], [0]]}, "horizon": 1.0,
            "diffeo": {"kind": "identity"}}"#;
        let empty = tempfile::tempdir().unwrap();
        let err = run_scenario(
            &validate_config(bad).unwrap(),
            &RunOptions {
                out_dir: Some(empty.path().to_path_buf()),
                threads: None,
            },
        );
        assert!(matches!(err, Err(Error::Uncontrollable { .. })));
        assert_eq!(fs::read_dir(empty.path()).unwrap().count(), 0);
    }

    #[test]
    fn config_round_trips() {
        let cfg = validate_config(&steer_json(r#", "seed": 7, "density": {"kind": "gaussian", "mean": [0, 1], "cov": [[1, 0], [0, 2]]}"#)).unwrap();
        let again = validate_config(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
    }
}
