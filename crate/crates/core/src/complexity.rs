//! Covering-number and switching-count bounds for realizing diffeomorphisms
//! of a compact embedded manifold as compositions of rescaled flows, and an
//! executor for such compositions `e^{a_k f_k} ∘ … ∘ e^{a_1 f_1}`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matops::{Matrix, Vector};

/// Trajectories whose norm exceeds this are treated as diverged.
pub const BLOW_UP_NORM: f64 = 1e9;

/// RK4 step used within each unit-time program step (100 substeps).
pub const DEFAULT_FLOW_STEP: f64 = 0.01;

/// A compact `n`-manifold isometrically embedded in `ℝᵈ` with positive reach.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifoldSpec {
    pub name: String,
    pub intrinsic_dim: usize,
    pub ambient_dim: usize,
    pub volume: f64,
    pub reach: f64,
}

impl ManifoldSpec {
    pub fn new(name: impl Into<String>, intrinsic_dim: usize, ambient_dim: usize, volume: f64, reach: f64) -> Result<Self> {
        if intrinsic_dim == 0 || ambient_dim <= intrinsic_dim {
            return Err(Error::Invalid(format!(
                "need ambient dim > intrinsic dim >= 1, got n = {intrinsic_dim}, d = {ambient_dim}"
            )));
        }
        if !(volume.is_finite() && volume > 0.0) {
            return Err(Error::Range(format!("volume must be finite and positive, got {volume}")));
        }
        if !(reach.is_finite() && reach > 0.0) {
            return Err(Error::Range(format!("reach must be finite and positive, got {reach}")));
        }
        Ok(Self {
            name: name.into(),
            intrinsic_dim,
            ambient_dim,
            volume,
            reach,
        })
    }

    /// Unit circle in `ℝ²`.
    pub fn circle() -> Self {
        Self::sphere(1).relabel("S1")
    }

    /// Unit sphere in `ℝ³`.
    pub fn sphere2() -> Self {
        Self::sphere(2)
    }

    /// Unit sphere `Sⁿ ⊂ ℝⁿ⁺¹`; its reach is 1 and its area is `(n+1)·V_{n+1}`.
    pub fn sphere(n: usize) -> Self {
        assert!(n >= 1, "sphere dimension must be at least 1");
        Self {
            name: format!("S{n}"),
            intrinsic_dim: n,
            ambient_dim: n + 1,
            volume: (n + 1) as f64 * unit_ball_volume(n + 1),
            reach: 1.0,
        }
    }

    /// Product of two unit circles in `ℝ⁴`. Moving a distance 1 along either
    /// circle's inward normal lands on a point equidistant from that whole
    /// circle, so the reach is 1.
    pub fn flat_torus() -> Self {
        Self {
            name: "T2".into(),
            intrinsic_dim: 2,
            ambient_dim: 4,
            volume: 4.0 * PI * PI,
            reach: 1.0,
        }
    }

    /// Catalog lookup: `circle`/`S1`, `sphere`/`S2`, `S<n>`, `torus`/`T2`.
    pub fn by_name(name: &str) -> Result<Self> {
        let key = name.trim().to_ascii_lowercase();
        match key.as_str() {
            "circle" | "s1" => return Ok(Self::circle()),
            "sphere" | "s2" => return Ok(Self::sphere2()),
            "torus" | "flat_torus" | "flat-torus" | "t2" => return Ok(Self::flat_torus()),
            _ => {}
        }
        if let Some(n) = key.strip_prefix('s').and_then(|d| d.parse::<usize>().ok()) {
            if n >= 1 {
                return Ok(Self::sphere(n));
            }
        }
        Err(Error::Invalid(format!(
            "unknown manifold '{name}' (expected circle, sphere, S<n> or torus)"
        )))
    }

    pub fn catalog_names() -> &'static [&'static str] {
        &["circle", "sphere", "S<n>", "torus"]
    }

    fn relabel(mut self, name: &str) -> Self {
        self.name = name.into();
        self
    }

    fn check_radius(&self, r: f64) -> Result<()> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::Range(format!("resolution r must be finite and positive, got {r}")));
        }
        if r >= self.reach {
            return Err(Error::Range(format!(
                "resolution r = {r} must be below the reach {} of {}",
                self.reach, self.name
            )));
        }
        Ok(())
    }

    /// `vol(M) / vol(B_{ℝⁿ}(0,1))`, the prefactor shared by every bound.
    fn volume_ratio(&self) -> f64 {
        self.volume / unit_ball_volume(self.intrinsic_dim)
    }
}

/// Volume of the unit ball in `ℝⁿ`, `π^{n/2} / Γ(n/2 + 1)`, evaluated by the
/// recursion `V_n = (2π/n)·V_{n−2}` from `V_0 = 1`, `V_1 = 2`.
pub fn unit_ball_volume(n: usize) -> f64 {
    let mut v = if n % 2 == 0 { 1.0 } else { 2.0 };
    let mut k = if n % 2 == 0 { 2 } else { 3 };
    while k <= n {
        v *= 2.0 * PI / k as f64;
        k += 2;
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoveringBounds {
    pub n_low: f64,
    pub n_high: f64,
}

/// Lower and upper bounds on the number of radius-`r` balls covering `M`:
/// `vol/V_n · n·16⁻ⁿ·r⁻ⁿ` and `vol/V_n · n·(π/2)ⁿ·r⁻ⁿ`. Requires `0 < r < τ`.
pub fn covering_bounds(m: &ManifoldSpec, r: f64) -> Result<CoveringBounds> {
    m.check_radius(r)?;
    let n = m.intrinsic_dim as i32;
    let base = m.volume_ratio() * n as f64 * r.powi(-n);
    Ok(CoveringBounds {
        n_low: base * 16f64.powi(-n),
        n_high: base * (PI / 2.0).powi(n),
    })
}

/// Lower bound `vol/V_n · n²·16⁻ⁿ·r⁻ⁿ` on the number of flows per
/// representation, read as a lower bound on the number of switchings.
/// Returned as a real; rounding up is left to the caller.
pub fn switching_lower_bound(m: &ManifoldSpec, r: f64) -> Result<f64> {
    m.check_radius(r)?;
    let n = m.intrinsic_dim as i32;
    Ok(m.volume_ratio() * (n * n) as f64 / 16f64.powi(n) * r.powi(-n))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub manifold: String,
    pub intrinsic_dim: usize,
    pub ambient_dim: usize,
    pub volume: f64,
    pub reach: f64,
    pub r: f64,
    pub n_low: f64,
    pub n_high: f64,
    pub k_low: f64,
    pub k_per_fragment: usize,
    /// `ceil(n_low)`, the fragment count used for the estimate.
    pub fragments: f64,
    /// `k_per_fragment · ceil(n_low)`.
    pub k_estimate: f64,
    /// Factor `1/(16r)` by which the `r`-dependent part of `k_low` grows
    /// with each added intrinsic dimension; above 1 the bound is exponential in `n`.
    pub growth_per_dimension: f64,
}

pub fn complexity_report(m: &ManifoldSpec, r: f64, k_per_fragment: usize) -> Result<ComplexityReport> {
    let cover = covering_bounds(m, r)?;
    let k_low = switching_lower_bound(m, r)?;
    if k_per_fragment < m.intrinsic_dim {
        return Err(Error::Invalid(format!(
            "k_per_fragment = {k_per_fragment} is below the intrinsic dimension {}",
            m.intrinsic_dim
        )));
    }
    let fragments = cover.n_low.ceil();
    Ok(ComplexityReport {
        manifold: m.name.clone(),
        intrinsic_dim: m.intrinsic_dim,
        ambient_dim: m.ambient_dim,
        volume: m.volume,
        reach: m.reach,
        r,
        n_low: cover.n_low,
        n_high: cover.n_high,
        k_low,
        k_per_fragment,
        fragments,
        k_estimate: k_per_fragment as f64 * fragments,
        growth_per_dimension: 1.0 / (16.0 * r),
    })
}

pub type FieldFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;

/// A vector field of the generating family.
#[derive(Clone)]
pub enum Generator {
    /// `f(x) = M x`.
    Linear(Matrix),
    /// `f(x) = c`; in angle coordinates `c = [1]` is `∂θ` on the circle.
    Constant(Vector),
    Custom { dim: usize, label: String, field: FieldFn },
}

impl Generator {
    pub fn angular() -> Self {
        Generator::Constant(Vector::from_element(1, 1.0))
    }

    pub fn dim(&self) -> usize {
        match self {
            Generator::Linear(m) => m.nrows(),
            Generator::Constant(c) => c.len(),
            Generator::Custom { dim, .. } => *dim,
        }
    }

    pub fn eval(&self, x: &Vector) -> Vector {
        match self {
            Generator::Linear(m) => m * x,
            Generator::Constant(c) => c.clone(),
            Generator::Custom { field, .. } => field(x),
        }
    }
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generator::Linear(m) => write!(f, "Linear({}x{})", m.nrows(), m.ncols()),
            Generator::Constant(c) => write!(f, "Constant({:?})", c.as_slice()),
            Generator::Custom { dim, label, .. } => write!(f, "Custom({label}, dim {dim})"),
        }
    }
}

/// The scalar function `a_i` multiplying a generator.
#[derive(Clone)]
pub enum Scaling {
    Constant(f64),
    /// `a(x) = ⟨w, x⟩ + c`.
    Affine { weights: Vector, offset: f64 },
    Custom { label: String, scale: ScalarFn },
}

impl Scaling {
    pub fn eval(&self, x: &Vector) -> f64 {
        match self {
            Scaling::Constant(c) => *c,
            Scaling::Affine { weights, offset } => weights.dot(x) + offset,
            Scaling::Custom { scale, .. } => scale(x),
        }
    }
}

impl fmt::Debug for Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scaling::Constant(c) => write!(f, "Constant({c})"),
            Scaling::Affine { weights, offset } => write!(f, "Affine({:?}, {offset})", weights.as_slice()),
            Scaling::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowStep {
    pub scaling: Scaling,
    pub field: usize,
}

/// An ordered composition of rescaled flows; step 1 is applied first.
#[derive(Debug, Clone)]
pub struct FlowProgram {
    dim: usize,
    generators: Vec<Generator>,
    steps: Vec<FlowStep>,
}

impl FlowProgram {
    pub fn new(dim: usize, generators: Vec<Generator>, steps: Vec<FlowStep>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("flow program needs dim >= 1".into()));
        }
        for (i, g) in generators.iter().enumerate() {
            if g.dim() != dim {
                return Err(Error::Dimension(format!("generator {i} has dim {}, expected {dim}", g.dim())));
            }
            if let Generator::Linear(m) = g {
                if !m.is_square() {
                    return Err(Error::Dimension(format!("generator {i} matrix is not square")));
                }
            }
        }
        for (k, s) in steps.iter().enumerate() {
            if s.field >= generators.len() {
                return Err(Error::Invalid(format!(
                    "step {k} uses field {} but only {} generators exist",
                    s.field,
                    generators.len()
                )));
            }
            match &s.scaling {
                Scaling::Constant(c) if !c.is_finite() => {
                    return Err(Error::NonFinite(format!("scaling of step {k}")));
                }
                Scaling::Affine { weights, offset } => {
                    if weights.len() != dim {
                        return Err(Error::Dimension(format!(
                            "scaling of step {k} has {} weights, expected {dim}",
                            weights.len()
                        )));
                    }
                    if !offset.is_finite() || weights.iter().any(|w| !w.is_finite()) {
                        return Err(Error::NonFinite(format!("scaling of step {k}")));
                    }
                }
                _ => {}
            }
        }
        Ok(Self { dim, generators, steps })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn steps(&self) -> &[FlowStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn substeps_for(step: f64) -> Result<usize> {
    if !(step.is_finite() && step > 0.0 && step <= 1.0) {
        return Err(Error::Range(format!("flow step must lie in (0, 1], got {step}")));
    }
    Ok((1.0 / step).round().max(1.0) as usize)
}

fn check_state(x: &Vector, step: usize) -> Result<()> {
    let norm = x.norm();
    if !norm.is_finite() || norm > BLOW_UP_NORM {
        return Err(Error::FlowBlowUp { step, norm });
    }
    Ok(())
}

/// RK4 for `x' = field(x)` over unit time in `n` equal substeps.
fn rk4_unit(x: &mut Vector, n: usize, step_index: usize, field: impl Fn(&Vector) -> Vector) -> Result<()> {
    let h = 1.0 / n as f64;
    for _ in 0..n {
        let k1 = field(x);
        let k2 = field(&(&*x + &k1 * (h / 2.0)));
        let k3 = field(&(&*x + &k2 * (h / 2.0)));
        let k4 = field(&(&*x + &k3 * h));
        *x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        check_state(x, step_index)?;
    }
    Ok(())
}

/// Applies the program to `x`, integrating `x' = a_i(x) f_i(x)` for unit
/// time per step with RK4 of step size `step` (rounded to divide 1).
/// Divergence reports the 1-based index of the offending step.
pub fn flow_program_apply(prog: &FlowProgram, x: &Vector, step: f64) -> Result<Vector> {
    if x.len() != prog.dim {
        return Err(Error::Dimension(format!("point has dim {}, program {}", x.len(), prog.dim)));
    }
    let n = substeps_for(step)?;
    let mut y = x.clone();
    check_state(&y, 0)?;
    for (k, s) in prog.steps.iter().enumerate() {
        let g = &prog.generators[s.field];
        rk4_unit(&mut y, n, k + 1, |z| g.eval(z) * s.scaling.eval(z))?;
    }
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct SchedulePiece {
    pub start: f64,
    pub end: f64,
    pub channel: usize,
    pub scaling: Scaling,
}

/// A feedback `u(t, x)` that is piecewise constant in `t`: on `[i−1, i)` only
/// channel `channel_i` is active, with value `a_i(x)`.
#[derive(Debug, Clone)]
pub struct SwitchingSchedule {
    m_controls: usize,
    dim: usize,
    fields: Vec<Generator>,
    pieces: Vec<SchedulePiece>,
}

impl SwitchingSchedule {
    pub fn pieces(&self) -> &[SchedulePiece] {
        &self.pieces
    }

    pub fn switching_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn total_time(&self) -> f64 {
        self.pieces.last().map_or(0.0, |p| p.end)
    }

    pub fn input_dim(&self) -> usize {
        self.m_controls
    }

    fn piece_control(&self, piece: usize, x: &Vector) -> Vector {
        let p = &self.pieces[piece];
        let mut u = Vector::zeros(self.m_controls);
        u[p.channel] = p.scaling.eval(x);
        u
    }

    /// The control at time `t`; the final instant belongs to the last piece.
    pub fn control(&self, t: f64, x: &Vector) -> Result<Vector> {
        let total = self.total_time();
        if !(0.0..=total).contains(&t) || self.pieces.is_empty() {
            return Err(Error::Range(format!("t = {t} outside the schedule [0, {total}]")));
        }
        let piece = (t.floor() as usize).min(self.pieces.len() - 1);
        Ok(self.piece_control(piece, x))
    }

    /// Right-hand side of the control-affine system `x' = Σ_j u_j f_j(x)`.
    pub fn velocity(&self, u: &Vector, x: &Vector) -> Vector {
        let mut v = Vector::zeros(self.dim);
        for (j, f) in self.fields.iter().enumerate().take(self.m_controls) {
            if u[j] != 0.0 {
                v += f.eval(x) * u[j];
            }
        }
        v
    }

    /// Simulates the control-affine system under the schedule by RK4, with
    /// the grid aligned to the switching times.
    pub fn simulate(&self, x: &Vector, step: f64) -> Result<Vector> {
        if x.len() != self.dim {
            return Err(Error::Dimension(format!("point has dim {}, schedule {}", x.len(), self.dim)));
        }
        let n = substeps_for(step)?;
        let mut y = x.clone();
        for piece in 0..self.pieces.len() {
            rk4_unit(&mut y, n, piece + 1, |z| self.velocity(&self.piece_control(piece, z), z))?;
        }
        Ok(y)
    }
}

/// Reads the program as a switched feedback with `m_controls` channels, the
/// `j`-th channel driving generator `j`.
pub fn flow_program_to_schedule(prog: &FlowProgram, m_controls: usize) -> Result<SwitchingSchedule> {
    for (k, s) in prog.steps.iter().enumerate() {
        if s.field >= m_controls {
            return Err(Error::Invalid(format!(
                "step {k} uses field {} but only {m_controls} control channels exist",
                s.field
            )));
        }
    }
    let pieces = prog
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| SchedulePiece {
            start: i as f64,
            end: (i + 1) as f64,
            channel: s.field,
            scaling: s.scaling.clone(),
        })
        .collect();
    Ok(SwitchingSchedule {
        m_controls,
        dim: prog.dim,
        fields: prog.generators.clone(),
        pieces,
    })
}
