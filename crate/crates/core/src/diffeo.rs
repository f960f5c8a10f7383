//! Smooth maps with exact Jacobians, sampled densities, the `ψ ↔ ψ̂`
//! change of frame, and sampled checks of monotonicity and of the
//! Monge–Ampère pushforward relation.

use std::fmt;
use std::sync::Arc;

use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lti::{self, LtiSystem};
use crate::matops::{self, Matrix, SpdMatrix, Vector};
use crate::tolerance::Tolerances;

pub type EvalFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffeoKind {
    Affine,
    GradientOfConvex,
    Composed,
    Custom,
}

/// A smooth map `ℝⁿ → ℝⁿ` carried together with its exact Jacobian.
#[derive(Clone)]
pub struct DiffeoSpec {
    dim: usize,
    kind: DiffeoKind,
    label: String,
    eval: EvalFn,
    jacobian: JacobianFn,
}

impl fmt::Debug for DiffeoSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffeoSpec")
            .field("dim", &self.dim)
            .field("kind", &self.kind)
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

impl DiffeoSpec {
    pub fn custom(
        dim: usize,
        label: impl Into<String>,
        eval: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        jacobian: impl Fn(&Vector) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            kind: DiffeoKind::Custom,
            label: label.into(),
            eval: Arc::new(eval),
            jacobian: Arc::new(jacobian),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::linear(Matrix::identity(dim, dim)).relabel("identity")
    }

    /// `x ↦ Mx + c`.
    pub fn affine(matrix: Matrix, offset: Vector) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() != offset.len() {
            return Err(Error::Dimension(format!(
                "affine map needs an n x n matrix and length-n offset, got {}x{} and {}",
                matrix.nrows(),
                matrix.ncols(),
                offset.len()
            )));
        }
        matops::ensure_finite(&matrix, "affine matrix")?;
        if !offset.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("affine offset".into()));
        }
        let dim = offset.len();
        let jac = matrix.clone();
        Ok(Self {
            dim,
            kind: DiffeoKind::Affine,
            label: "affine".into(),
            eval: Arc::new(move |x| &matrix * x + &offset),
            jacobian: Arc::new(move |_| jac.clone()),
        })
    }

    pub fn linear(matrix: Matrix) -> Self {
        let n = matrix.nrows();
        Self::affine(matrix, Vector::zeros(n)).expect("square matrix").relabel("linear")
    }

    pub fn translation(offset: Vector) -> Self {
        let n = offset.len();
        Self::affine(Matrix::identity(n, n), offset)
            .expect("consistent dims")
            .relabel("translation")
    }

    /// `ψ = ∇h` for a convex potential `h`; the caller supplies `∇h` and `∇²h`.
    pub fn gradient_of_convex(
        dim: usize,
        label: impl Into<String>,
        gradient: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        hessian: impl Fn(&Vector) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            kind: DiffeoKind::GradientOfConvex,
            label: label.into(),
            eval: Arc::new(gradient),
            jacobian: Arc::new(hessian),
        }
    }

    /// Coordinatewise `z ↦ z + α tanh(z)`, the gradient of
    /// `Σ z²/2 + α log cosh z`; convex for `|α| < 1`.
    pub fn tanh_shift(dim: usize, alpha: f64) -> Result<Self> {
        if !(alpha.abs() < 1.0) {
            return Err(Error::Invalid(format!("tanh shift needs |alpha| < 1, got {alpha}")));
        }
        Ok(Self::gradient_of_convex(
            dim,
            format!("tanh-shift({alpha})"),
            move |z| z.map(|v| v + alpha * v.tanh()),
            move |z| {
                Matrix::from_diagonal(&z.map(|v| {
                    let s = 1.0 / v.cosh();
                    1.0 + alpha * s * s
                }))
            },
        ))
    }

    /// `outer ∘ inner`.
    pub fn compose(outer: &DiffeoSpec, inner: &DiffeoSpec) -> Result<Self> {
        if outer.dim != inner.dim {
            return Err(Error::Dimension(format!(
                "cannot compose maps of dims {} and {}",
                outer.dim, inner.dim
            )));
        }
        let (o_eval, o_jac) = (outer.eval.clone(), outer.jacobian.clone());
        let (i_eval, i_jac) = (inner.eval.clone(), inner.jacobian.clone());
        let i_eval2 = i_eval.clone();
        let kind = if outer.kind == DiffeoKind::Affine && inner.kind == DiffeoKind::Affine {
            DiffeoKind::Affine
        } else {
            DiffeoKind::Composed
        };
        Ok(Self {
            dim: outer.dim,
            kind,
            label: format!("{} ∘ {}", outer.label, inner.label),
            eval: Arc::new(move |x| o_eval(&i_eval(x))),
            jacobian: Arc::new(move |x| o_jac(&i_eval2(x)) * i_jac(x)),
        })
    }

    /// `x ↦ e^{AT} x`: the target reached with zero input.
    pub fn free_flow(sys: &LtiSystem, horizon: f64) -> Result<Self> {
        Ok(Self::linear(sys.transition(horizon)?).relabel("free-flow"))
    }

    pub fn relabel(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    fn with_kind(mut self, kind: DiffeoKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> DiffeoKind {
        self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: &Vector) -> Vector {
        (self.eval)(x)
    }

    pub fn jacobian(&self, x: &Vector) -> Matrix {
        (self.jacobian)(x)
    }

    /// Largest absolute gap between the stored Jacobian and a central finite
    /// difference of `eval` at the given points.
    pub fn jacobian_fd_error(&self, points: &[Vector], h: f64) -> f64 {
        let mut worst = 0.0f64;
        for x in points {
            let jac = self.jacobian(x);
            for j in 0..self.dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let col = (self.eval(&xp) - self.eval(&xm)) / (2.0 * h);
                worst = worst.max((col - jac.column(j)).amax());
            }
        }
        worst
    }

    /// Largest `|Dψ - Dψᵀ|` entry at the given points.
    pub fn jacobian_asymmetry(&self, points: &[Vector]) -> f64 {
        points
            .iter()
            .map(|x| {
                let j = self.jacobian(x);
                (&j - j.transpose()).amax()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityKind {
    Gaussian,
    Mixture,
    Custom,
}

pub type LogDensityFn = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;
pub type SamplerFn = Arc<dyn Fn(&mut ChaCha8Rng) -> Vector + Send + Sync>;

/// A probability density with a log-density and a seeded sampler.
#[derive(Clone)]
pub struct DensitySpec {
    dim: usize,
    kind: DensityKind,
    label: String,
    log_density: LogDensityFn,
    sampler: SamplerFn,
}

impl fmt::Debug for DensitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DensitySpec")
            .field("dim", &self.dim)
            .field("kind", &self.kind)
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

struct GaussianParts {
    mean: Vector,
    chol_l: Matrix,
    log_norm: f64,
}

impl GaussianParts {
    fn new(mean: Vector, cov: &Matrix) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Dimension(format!(
                "covariance must be {n}x{n}, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let spd = SpdMatrix::new(cov.clone())?;
        let chol = Cholesky::new(spd.into_inner()).ok_or(Error::NotPsd {
            min_eig: 0.0,
            max_eig: cov.amax(),
        })?;
        let chol_l = chol.l();
        let log_det: f64 = chol_l.diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let log_norm = -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self {
            mean,
            chol_l,
            log_norm,
        })
    }

    fn log_density(&self, x: &Vector) -> f64 {
        let d = x - &self.mean;
        let z = self
            .chol_l
            .solve_lower_triangular(&d)
            .expect("Cholesky factor is nonsingular");
        self.log_norm - 0.5 * z.norm_squared()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vector {
        let z = Vector::from_fn(self.mean.len(), |_, _| rng.sample(StandardNormal));
        &self.mean + &self.chol_l * z
    }
}

impl DensitySpec {
    pub fn gaussian(mean: Vector, cov: Matrix) -> Result<Self> {
        let parts = Arc::new(GaussianParts::new(mean, &cov)?);
        let dim = parts.mean.len();
        let p1 = parts.clone();
        Ok(Self {
            dim,
            kind: DensityKind::Gaussian,
            label: "gaussian".into(),
            log_density: Arc::new(move |x| p1.log_density(x)),
            sampler: Arc::new(move |rng| parts.sample(rng)),
        })
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self::gaussian(Vector::zeros(dim), Matrix::identity(dim, dim)).expect("identity is SPD")
    }

    /// Finite Gaussian mixture; weights are normalized.
    pub fn mixture(components: Vec<(f64, Vector, Matrix)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Invalid("mixture needs at least one component".into()));
        }
        let total: f64 = components.iter().map(|c| c.0).sum();
        if components.iter().any(|c| !(c.0 > 0.0)) || !total.is_finite() {
            return Err(Error::Invalid("mixture weights must be positive".into()));
        }
        let dim = components[0].1.len();
        let mut parts = Vec::with_capacity(components.len());
        let mut log_w = Vec::with_capacity(components.len());
        let mut cumulative = Vec::with_capacity(components.len());
        let mut acc = 0.0;
        for (w, mean, cov) in components {
            if mean.len() != dim {
                return Err(Error::Dimension("mixture components differ in dimension".into()));
            }
            parts.push(GaussianParts::new(mean, &cov)?);
            log_w.push((w / total).ln());
            acc += w / total;
            cumulative.push(acc);
        }
        let parts = Arc::new(parts);
        let p1 = parts.clone();
        Ok(Self {
            dim,
            kind: DensityKind::Mixture,
            label: "mixture".into(),
            log_density: Arc::new(move |x| {
                let terms: Vec<f64> = p1
                    .iter()
                    .zip(&log_w)
                    .map(|(p, lw)| lw + p.log_density(x))
                    .collect();
                let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return max;
                }
                max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
            }),
            sampler: Arc::new(move |rng| {
                let u: f64 = rng.random();
                let idx = cumulative.iter().position(|&c| u < c).unwrap_or(parts.len() - 1);
                parts[idx].sample(rng)
            }),
        })
    }

    pub fn custom(
        dim: usize,
        label: impl Into<String>,
        log_density: impl Fn(&Vector) -> f64 + Send + Sync + 'static,
        sampler: impl Fn(&mut ChaCha8Rng) -> Vector + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            kind: DensityKind::Custom,
            label: label.into(),
            log_density: Arc::new(log_density),
            sampler: Arc::new(sampler),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> DensityKind {
        self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn log_density(&self, x: &Vector) -> f64 {
        (self.log_density)(x)
    }

    pub fn density(&self, x: &Vector) -> f64 {
        self.log_density(x).exp()
    }

    /// The `index`-th draw for `seed`. Each index has its own ChaCha stream,
    /// so draws do not depend on evaluation order.
    pub fn sample_at(&self, seed: u64, index: u64) -> Vector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        (self.sampler)(&mut rng)
    }

    pub fn sample(&self, count: usize, seed: u64) -> Vec<Vector> {
        (0..count as u64).map(|i| self.sample_at(seed, i)).collect()
    }
}

/// Precomputed `W(0,T)^{±1/2}` and `e^{∓AT}` relating `ψ` and `ψ̂`.
#[derive(Debug, Clone)]
pub struct HatFrame {
    pub gramian: SpdMatrix,
    pub sqrt: Matrix,
    pub inv_sqrt: Matrix,
    pub forward: Matrix,
    pub backward: Matrix,
}

impl HatFrame {
    pub fn new(sys: &LtiSystem, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Range(format!("horizon must be > 0, got {horizon}")));
        }
        let gramian = lti::gramian(sys, horizon)?;
        let inv_sqrt = gramian
            .inverse_sqrt()
            .map_err(|_| Error::SingularGramian { t: horizon })?;
        let sqrt = matops::spd_sqrt(&gramian)?.into_inner();
        Ok(Self {
            gramian,
            sqrt,
            inv_sqrt,
            forward: sys.transition(horizon)?,
            backward: sys.transition(-horizon)?,
        })
    }

    /// `ψ̂(x) = W^{-1/2} e^{-AT} ψ(W^{1/2} x)`.
    pub fn hat(&self, psi: &DiffeoSpec) -> Result<DiffeoSpec> {
        self.conjugate(psi, &self.inv_sqrt * &self.backward, self.sqrt.clone())
            .map(|d| d.relabel(format!("hat({})", psi.label)))
    }

    /// `ψ(x) = e^{AT} W^{1/2} ψ̂(W^{-1/2} x)`.
    pub fn unhat(&self, psihat: &DiffeoSpec) -> Result<DiffeoSpec> {
        self.conjugate(psihat, &self.forward * &self.sqrt, self.inv_sqrt.clone())
            .map(|d| d.relabel(format!("unhat({})", psihat.label)))
    }

    /// `x ↦ L map(R x)` with Jacobian `L Dmap(Rx) R`.
    fn conjugate(&self, map: &DiffeoSpec, left: Matrix, right: Matrix) -> Result<DiffeoSpec> {
        if map.dim != self.sqrt.nrows() {
            return Err(Error::Dimension(format!(
                "map has dim {}, system has {} states",
                map.dim,
                self.sqrt.nrows()
            )));
        }
        let kind = if map.kind == DiffeoKind::Affine {
            DiffeoKind::Affine
        } else {
            DiffeoKind::Composed
        };
        let (eval, jac) = (map.eval.clone(), map.jacobian.clone());
        let (l2, r2) = (left.clone(), right.clone());
        Ok(DiffeoSpec {
            dim: map.dim,
            kind,
            label: String::new(),
            eval: Arc::new(move |x| &left * eval(&(&right * x))),
            jacobian: Arc::new(move |x| &l2 * jac(&(&r2 * x)) * &r2),
        })
    }
}

pub fn hat_transform(psi: &DiffeoSpec, sys: &LtiSystem, horizon: f64) -> Result<DiffeoSpec> {
    HatFrame::new(sys, horizon)?.hat(psi)
}

pub fn inverse_hat_transform(
    psihat: &DiffeoSpec,
    sys: &LtiSystem,
    horizon: f64,
) -> Result<DiffeoSpec> {
    HatFrame::new(sys, horizon)?.unhat(psihat)
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Invalid("box bounds must be non-empty and equal length".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::Invalid(format!("empty box region {lo:?} .. {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    /// `[-half_width, half_width]^dim`.
    pub fn centered(dim: usize, half_width: f64) -> Result<Self> {
        Self::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vector {
        Vector::from_iterator(
            self.dim(),
            self.lo.iter().zip(&self.hi).map(|(l, h)| rng.random_range(*l..*h)),
        )
    }
}

/// Default test region `[-3, 3]ⁿ`.
pub fn default_region(dim: usize) -> BoxRegion {
    BoxRegion::centered(dim, 3.0).expect("positive width")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum MonotonicityWitness {
    /// `⟨x - y, ψ(x) - ψ(y)⟩ < 0`.
    Pair { x: Vec<f64>, y: Vec<f64>, pairing: f64 },
    /// Symmetric Jacobian part has a negative eigenvalue at `x`.
    Point { x: Vec<f64>, min_eigenvalue: f64 },
}

/// Outcome of a sampled monotonicity test. A passing verdict is evidence on
/// the sampled points only, not a proof.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityVerdict {
    pub monotone: bool,
    pub witness: Option<MonotonicityWitness>,
    pub min_pairing: f64,
    pub min_sym_jac_eig: f64,
    /// Smallest sampled `det Dψ`; positive values indicate local orientation
    /// preservation only (global injectivity is not checked).
    pub min_jacobian_det: f64,
    pub n_points: usize,
    pub n_pairs: usize,
}

pub fn monotonicity_certificate(
    map: &DiffeoSpec,
    region: &BoxRegion,
    n_samples: usize,
    seed: u64,
) -> Result<MonotonicityVerdict> {
    monotonicity_certificate_with(map, region, n_samples, seed, &Tolerances::default())
}

pub fn monotonicity_certificate_with(
    map: &DiffeoSpec,
    region: &BoxRegion,
    n_samples: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<MonotonicityVerdict> {
    if n_samples < 2 {
        return Err(Error::Invalid(format!("need at least 2 samples, got {n_samples}")));
    }
    if region.dim() != map.dim() {
        return Err(Error::Dimension(format!(
            "region dim {} does not match map dim {}",
            region.dim(),
            map.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vector> = (0..n_samples).map(|_| region.sample(&mut rng)).collect();
    let images: Vec<Vector> = points.iter().map(|x| map.eval(x)).collect();

    let mut min_pairing = f64::INFINITY;
    let mut worst_pair = (0, 1);
    for i in 0..n_samples {
        for j in (i + 1)..n_samples {
            let p = (&points[i] - &points[j]).dot(&(&images[i] - &images[j]));
            if p < min_pairing {
                min_pairing = p;
                worst_pair = (i, j);
            }
        }
    }

    let mut min_eig = f64::INFINITY;
    let mut worst_point = 0;
    let mut min_det = f64::INFINITY;
    for (k, x) in points.iter().enumerate() {
        let jac = map.jacobian(x);
        let e = matops::min_symmetric_eigenvalue(&jac);
        if e < min_eig {
            min_eig = e;
            worst_point = k;
        }
        min_det = min_det.min(jac.determinant());
    }

    let pair_ok = min_pairing >= -tol.monotone;
    let eig_ok = min_eig >= -tol.monotone;
    let witness = if !pair_ok {
        let (i, j) = worst_pair;
        Some(MonotonicityWitness::Pair {
            x: points[i].iter().copied().collect(),
            y: points[j].iter().copied().collect(),
            pairing: min_pairing,
        })
    } else if !eig_ok {
        Some(MonotonicityWitness::Point {
            x: points[worst_point].iter().copied().collect(),
            min_eigenvalue: min_eig,
        })
    } else {
        None
    };
    Ok(MonotonicityVerdict {
        monotone: pair_ok && eig_ok,
        witness,
        min_pairing,
        min_sym_jac_eig: min_eig,
        min_jacobian_det: min_det,
        n_points: n_samples,
        n_pairs: n_samples * (n_samples - 1) / 2,
    })
}

/// `max |det Dψ(x) ρ₁(ψ(x)) - ρ₀(x)| / ρ₀(x)` over the points.
pub fn monge_ampere_residual(
    psi: &DiffeoSpec,
    rho0: &DensitySpec,
    rho1: &DensitySpec,
    points: &[Vector],
) -> Result<f64> {
    if psi.dim() != rho0.dim() || psi.dim() != rho1.dim() {
        return Err(Error::Dimension("map and densities differ in dimension".into()));
    }
    let mut worst = 0.0f64;
    for x in points {
        let y = psi.eval(x);
        let log_rho1 = rho1.log_density(&y);
        if !log_rho1.is_finite() {
            return Err(Error::VanishingDensity {
                point: y.iter().copied().collect(),
            });
        }
        let log_rho0 = rho0.log_density(x);
        let det = psi.jacobian(x).determinant();
        // ratio computed in log space to avoid underflow in the tails
        let r = (det * (log_rho1 - log_rho0).exp() - 1.0).abs();
        worst = worst.max(r);
    }
    Ok(worst)
}

/// Optimal quadratic-cost map between `N(μ₀, S₀)` and `N(μ₁, S₁)`:
/// `x ↦ μ₁ + S₀^{-1/2}(S₀^{1/2} S₁ S₀^{1/2})^{1/2} S₀^{-1/2}(x - μ₀)`.
pub fn brenier_gaussian(mu0: &Vector, s0: &Matrix, mu1: &Vector, s1: &Matrix) -> Result<DiffeoSpec> {
    let n = mu0.len();
    if mu1.len() != n || s0.shape() != (n, n) || s1.shape() != (n, n) {
        return Err(Error::Dimension("Gaussian parameters differ in dimension".into()));
    }
    let s0 = SpdMatrix::new(s0.clone())?;
    let s1 = SpdMatrix::new(s1.clone())?;
    let s0_inv_sqrt = s0.inverse_sqrt()?;
    s1.inverse_sqrt()?;
    let s0_sqrt = matops::spd_sqrt(&s0)?.into_inner();
    let middle = SpdMatrix::from_symmetric_unchecked(&s0_sqrt * s1.matrix() * &s0_sqrt);
    let middle_sqrt = matops::spd_sqrt(&middle)?.into_inner();
    let linear = matops::symmetrize(&(&s0_inv_sqrt * middle_sqrt * &s0_inv_sqrt));
    let offset = mu1 - &linear * mu0;
    Ok(DiffeoSpec::affine(linear, offset)?
        .with_kind(DiffeoKind::GradientOfConvex)
        .relabel("brenier-gaussian"))
}
