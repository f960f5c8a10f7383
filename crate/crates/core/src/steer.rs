//! Open-loop and feedback steering laws for `x' = Ax + Bu`.
//!
//! With `W_t = W(0,t)` and `d(x₀) = e^{-AT}ψ(x₀) - x₀`:
//!
//! * open loop: `u_{x₀}(t) = Bᵀ e^{-Aᵀt} W_T⁻¹ d(x₀)`
//! * flow map: `K_t(x₀) = e^{At}(x₀ + W_t W_T⁻¹ d(x₀))`
//! * feedback: `u(t, x) = Bᵀ e^{-Aᵀt} W_T⁻¹ d(K_t⁻¹(x))`
//!
//! `K_t` is injective for `t < T` whenever `ψ̂ = W_T^{-1/2} e^{-AT} ψ(W_T^{1/2} ·)`
//! is monotone, because `x₀ ↦ W_t⁻¹ e^{-At} K_t(x₀)` is then strongly monotone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffeo::{self, DiffeoSpec, HatFrame, MonotonicityVerdict};
use crate::error::{Error, Result};
use crate::lti::{self, ControllabilityReport, LtiSystem};
use crate::matops::{self, Matrix, SpdMatrix, Vector};
use crate::tolerance::Tolerances;

/// Sample count and seed for the monotonicity certificate run by [`make_plan`].
const CERTIFICATE_SAMPLES: usize = 200;
const CERTIFICATE_SEED: u64 = 0x5eed;

/// Everything the feedback law needs, precomputed once per `(system, T, ψ)`.
#[derive(Debug, Clone)]
pub struct SteeringPlan {
    pub system: LtiSystem,
    pub horizon: f64,
    pub psi: DiffeoSpec,
    pub psihat: DiffeoSpec,
    pub frame: HatFrame,
    pub gramian_inv: Matrix,
    pub controllability: ControllabilityReport,
    pub certificate: MonotonicityVerdict,
    pub monotone_certified: bool,
    pub tolerances: Tolerances,
}

pub fn make_plan(sys: &LtiSystem, horizon: f64, psi: DiffeoSpec) -> Result<SteeringPlan> {
    make_plan_with(sys, horizon, psi, Tolerances::default())
}

pub fn make_plan_with(
    sys: &LtiSystem,
    horizon: f64,
    psi: DiffeoSpec,
    tolerances: Tolerances,
) -> Result<SteeringPlan> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Range(format!("horizon must be > 0, got {horizon}")));
    }
    if psi.dim() != sys.state_dim() {
        return Err(Error::Dimension(format!(
            "ψ has dim {}, system has {} states",
            psi.dim(),
            sys.state_dim()
        )));
    }
    let controllability = lti::controllability_check(sys, tolerances.controllability)?;
    if !controllability.controllable {
        return Err(Error::Uncontrollable {
            min_sv: controllability.min_sv,
            max_sv: controllability.max_sv,
        });
    }
    let frame = HatFrame::new(sys, horizon)?;
    let gramian_inv = frame
        .gramian
        .inverse()
        .map_err(|_| Error::SingularGramian { t: horizon })?;
    let psihat = frame.hat(&psi)?;
    let certificate = diffeo::monotonicity_certificate_with(
        &psihat,
        &diffeo::default_region(sys.state_dim()),
        CERTIFICATE_SAMPLES,
        CERTIFICATE_SEED,
        &tolerances,
    )?;
    Ok(SteeringPlan {
        system: sys.clone(),
        horizon,
        psi,
        psihat,
        frame,
        gramian_inv,
        controllability,
        monotone_certified: certificate.monotone,
        certificate,
        tolerances,
    })
}

/// Time-dependent factors of the steering laws at one instant.
#[derive(Debug, Clone)]
pub struct TimeSlice {
    pub t: f64,
    /// `e^{At}`
    pub transition: Matrix,
    /// `e^{-At}`
    pub transition_back: Matrix,
    pub gramian: SpdMatrix,
    /// `W_t W_T⁻¹`
    pub blend: Matrix,
    /// `Bᵀ e^{-Aᵀt} W_T⁻¹`
    pub input_gain: Matrix,
    /// `I - W_t W_T⁻¹`
    keep: Matrix,
    /// `W_t W_T⁻¹ e^{-AT}`
    push: Matrix,
}

/// Result of inverting `K_t` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct KInverse {
    pub x0: Vector,
    /// `ψ(x0)`.
    pub image: Vector,
    pub iterations: usize,
    pub residual: f64,
    pub used_fallback: bool,
}

impl SteeringPlan {
    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.system.input_dim()
    }

    pub fn gramian_horizon(&self) -> &SpdMatrix {
        &self.frame.gramian
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Range(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    pub fn slice(&self, t: f64) -> Result<TimeSlice> {
        self.check_time(t)?;
        let gramian = lti::gramian(&self.system, t)?;
        let transition = self.system.transition(t)?;
        let transition_back = self.system.transition(-t)?;
        let blend = gramian.matrix() * &self.gramian_inv;
        let input_gain = self.system.b().transpose() * transition_back.transpose() * &self.gramian_inv;
        let n = self.state_dim();
        let keep = Matrix::identity(n, n) - &blend;
        let push = &blend * &self.frame.backward;
        Ok(TimeSlice {
            t,
            transition,
            transition_back,
            gramian,
            blend,
            input_gain,
            keep,
            push,
        })
    }

    /// `e^{-AT}ψ(x₀) - x₀`.
    pub fn displacement(&self, x0: &Vector) -> Vector {
        &self.frame.backward * self.psi.eval(x0) - x0
    }

    /// `x₀ ↦ e^{-At} K_t(x₀) = x₀ + W_t W_T⁻¹ d(x₀)`.
    fn frame_map(&self, slice: &TimeSlice, x0: &Vector) -> Vector {
        self.frame_map_with_image(slice, x0).0
    }

    /// The frame map together with `ψ(x₀)`, which the feedback reuses.
    fn frame_map_with_image(&self, slice: &TimeSlice, x0: &Vector) -> (Vector, Vector) {
        let image = self.psi.eval(x0);
        let mut out = &slice.push * &image;
        out.gemv(1.0, &slice.keep, x0, 1.0);
        (out, image)
    }

    fn frame_jacobian(&self, slice: &TimeSlice, x0: &Vector) -> Matrix {
        &slice.keep + &slice.push * self.psi.jacobian(x0)
    }

    pub fn k_map_at(&self, slice: &TimeSlice, x0: &Vector) -> Vector {
        &slice.transition * self.frame_map(slice, x0)
    }

    /// `DK_t = e^{At}(I - W_t W_T⁻¹ + W_t W_T⁻¹ e^{-AT} Dψ)`.
    pub fn k_map_jacobian_at(&self, slice: &TimeSlice, x0: &Vector) -> Matrix {
        &slice.transition * self.frame_jacobian(slice, x0)
    }

    pub fn open_loop_at(&self, slice: &TimeSlice, x0: &Vector) -> Vector {
        &slice.input_gain * self.displacement(x0)
    }

    /// Solves `K_t(x₀) = x` by damped Newton from `guess` (default `e^{-At}x`),
    /// falling back to a relaxed fixed-point iteration on the strongly monotone
    /// map `x₀ ↦ W_t⁻¹ e^{-At} K_t(x₀)` if Newton stalls.
    pub fn invert_at(&self, slice: &TimeSlice, x: &Vector, guess: Option<&Vector>) -> Result<KInverse> {
        let tol = &self.tolerances;
        let target = &slice.transition_back * x;
        let scale = 1.0 + x.norm();
        let threshold = tol.newton * scale;

        let mut z = guess.cloned().unwrap_or_else(|| target.clone());
        let (mapped, mut image) = self.frame_map_with_image(slice, &z);
        let mut gap = mapped - &target;
        let mut gap_norm = gap.norm();
        let mut residual = (&slice.transition * &gap).norm();
        let mut iterations = 0;
        let mut last_step = f64::INFINITY;
        let mut lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> = None;
        // Newton converges quadratically, so once the residual is below the
        // threshold and the last step was tiny the iterate is at rounding level.
        while iterations < tol.newton_max_iter
            && !(residual <= threshold && (last_step <= 1e-8 * scale || residual == 0.0))
        {
            // after a full step the old factorization is a chord step whose
            // contraction rate is of the order of that step
            let factor = match lu.take() {
                Some(f) if last_step <= CHORD_REUSE * scale => f,
                _ => self.frame_jacobian(slice, &z).lu(),
            };
            let Some(step) = factor.solve(&gap) else {
                break;
            };
            let mut lambda = 1.0;
            let mut accepted = false;
            while lambda >= 1e-8 {
                let trial = &z - &step * lambda;
                let (mapped, trial_image) = self.frame_map_with_image(slice, &trial);
                let trial_gap = mapped - &target;
                let trial_norm = trial_gap.norm();
                if trial_norm <= (1.0 - 1e-4 * lambda) * gap_norm {
                    z = trial;
                    image = trial_image;
                    gap = trial_gap;
                    gap_norm = trial_norm;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            iterations += 1;
            if !accepted {
                break;
            }
            last_step = lambda * step.norm();
            if lambda == 1.0 {
                lu = Some(factor);
            }
            residual = (&slice.transition * &gap).norm();
        }
        if residual <= threshold {
            return Ok(KInverse {
                x0: z,
                image,
                iterations,
                residual,
                used_fallback: false,
            });
        }
        self.monotone_fallback(slice, x, z, iterations)
    }

    fn monotone_fallback(&self, slice: &TimeSlice, x: &Vector, start: Vector, newton_iters: usize) -> Result<KInverse> {
        let tol = &self.tolerances;
        let scale = 1.0 + x.norm();
        let target = &slice.transition_back * x;
        let w_inv = slice
            .gramian
            .inverse()
            .map_err(|_| Error::SingularGramian { t: slice.t })?;
        let field = |z: &Vector| &w_inv * (self.frame_map(slice, z) - &target);
        let mut z = start;
        let mut f = field(&z);
        let mut f_norm = f.norm();
        let mut iterations = newton_iters;
        for _ in 0..tol.fallback_max_iter {
            let residual = (&slice.transition * (self.frame_map(slice, &z) - &target)).norm();
            if residual <= tol.newton * scale {
                return Ok(KInverse {
                    image: self.psi.eval(&z),
                    x0: z,
                    iterations,
                    residual,
                    used_fallback: true,
                });
            }
            let lip = matops::operator_norm(&(&w_inv * self.frame_jacobian(slice, &z))).max(1e-300);
            let mut alpha = 1.0 / lip;
            let mut moved = false;
            while alpha * lip >= 1e-12 {
                let trial = &z - &f * alpha;
                let tf = field(&trial);
                let tn = tf.norm();
                if tn < f_norm {
                    z = trial;
                    f = tf;
                    f_norm = tn;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            iterations += 1;
            if !moved {
                break;
            }
        }
        let residual = (&slice.transition * (self.frame_map(slice, &z) - &target)).norm();
        if residual <= tol.newton * scale {
            return Ok(KInverse {
                image: self.psi.eval(&z),
                x0: z,
                iterations,
                residual,
                used_fallback: true,
            });
        }
        Err(Error::InversionFailed {
            t: slice.t,
            iterations,
            residual,
        })
    }

    /// Feedback input at `x` together with the preimage `K_t⁻¹(x)`.
    pub fn feedback_at(&self, slice: &TimeSlice, x: &Vector, guess: Option<&Vector>) -> Result<(Vector, KInverse)> {
        let inv = self.invert_at(slice, x, guess)?;
        let u = &slice.input_gain * (&self.frame.backward * &inv.image - &inv.x0);
        Ok((u, inv))
    }
}

/// Largest accepted Newton step, relative to `1 + |x|`, after which the
/// previous Jacobian factorization is reused.
const CHORD_REUSE: f64 = 1e-4;

pub fn open_loop_control(plan: &SteeringPlan, x0: &Vector, t: f64) -> Result<Vector> {
    Ok(plan.open_loop_at(&plan.slice(t)?, x0))
}

pub fn k_map(plan: &SteeringPlan, t: f64, x0: &Vector) -> Result<Vector> {
    Ok(plan.k_map_at(&plan.slice(t)?, x0))
}

pub fn k_map_inverse(plan: &SteeringPlan, t: f64, x: &Vector) -> Result<Vector> {
    Ok(plan.invert_at(&plan.slice(t)?, x, None)?.x0)
}

pub fn feedback_control(plan: &SteeringPlan, t: f64, x: &Vector) -> Result<Vector> {
    Ok(plan.feedback_at(&plan.slice(t)?, x, None)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstPair {
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InjectivityReport {
    pub n_pairs: usize,
    pub min_bilinear: f64,
    pub worst_pair: Option<WorstPair>,
    pub evaluated_times: Vec<f64>,
    pub skipped_times: Vec<f64>,
}

/// `⟨x₀ - y₀, W_t⁻¹ e^{-At}(K_t(x₀) - K_t(y₀))⟩`, evaluated directly.
pub fn injectivity_form(plan: &SteeringPlan, slice: &TimeSlice, w_inv: &Matrix, x0: &Vector, y0: &Vector) -> f64 {
    let diff = plan.k_map_at(slice, x0) - plan.k_map_at(slice, y0);
    (x0 - y0).dot(&(w_inv * &slice.transition_back * diff))
}

/// The two terms the injectivity form splits into:
/// `⟨d, (W_t⁻¹ - W_T⁻¹) d⟩` and `⟨x̂₀ - ŷ₀, ψ̂(x̂₀) - ψ̂(ŷ₀)⟩`.
pub fn injectivity_decomposition(plan: &SteeringPlan, t: f64, x0: &Vector, y0: &Vector) -> Result<(f64, f64)> {
    let slice = plan.slice(t)?;
    let w_inv = slice.gramian.inverse().map_err(|_| Error::SingularGramian { t })?;
    let d = x0 - y0;
    let first = d.dot(&((w_inv - &plan.gramian_inv) * &d));
    let xh = &plan.frame.inv_sqrt * x0;
    let yh = &plan.frame.inv_sqrt * y0;
    let second = (&xh - &yh).dot(&(plan.psihat.eval(&xh) - plan.psihat.eval(&yh)));
    Ok((first, second))
}

/// Minimum of the injectivity form over seeded pairs in `[-3, 3]ⁿ` and the
/// given times. Times below `probe_min_fraction * T`, at or past `T`, or
/// with a numerically singular `W(0,t)` are skipped and listed.
pub fn injectivity_probe(plan: &SteeringPlan, n_pairs: usize, times: &[f64], seed: u64) -> Result<InjectivityReport> {
    let region = diffeo::default_region(plan.state_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n_pairs);
    while pairs.len() < n_pairs {
        let x = region.sample(&mut rng);
        let y = region.sample(&mut rng);
        if (&x - &y).norm() >= 1e-8 {
            pairs.push((x, y));
        }
    }
    let mut report = InjectivityReport {
        n_pairs,
        min_bilinear: f64::INFINITY,
        worst_pair: None,
        evaluated_times: Vec::new(),
        skipped_times: Vec::new(),
    };
    for &t in times {
        if !(t >= plan.tolerances.probe_min_fraction * plan.horizon) || t >= plan.horizon {
            report.skipped_times.push(t);
            continue;
        }
        let slice = plan.slice(t)?;
        let Ok(w_inv) = slice.gramian.inverse() else {
            report.skipped_times.push(t);
            continue;
        };
        report.evaluated_times.push(t);
        for (x, y) in &pairs {
            let v = injectivity_form(plan, &slice, &w_inv, x, y);
            if v < report.min_bilinear {
                report.min_bilinear = v;
                report.worst_pair = Some(WorstPair {
                    x0: x.iter().copied().collect(),
                    y0: y.iter().copied().collect(),
                    t,
                });
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub t: f64,
    /// `‖W_t W_T⁻¹‖₂`
    pub norm: f64,
    /// spectral radius of `W_t W_T⁻¹`
    pub radius: f64,
    /// `‖W_T^{-1/2} W_t W_T^{-1/2}‖₂`, never above one
    pub normalized_norm: f64,
}

/// Operator norm against spectral radius of `W(0,t) W(0,T)⁻¹` along a grid.
pub fn norm_vs_radius_diagnostic(plan: &SteeringPlan, grid: &[f64]) -> Result<Vec<DiagnosticRow>> {
    grid.iter()
        .map(|&t| {
            plan.check_time(t)?;
            let w = lti::gramian(&plan.system, t)?;
            let blend = w.matrix() * &plan.gramian_inv;
            let norm = matops::operator_norm(&blend);
            // blend is similar to the symmetric normalized matrix, whose
            // eigensolve stays accurate when blend is far from normal
            let normalized = &plan.frame.inv_sqrt * w.matrix() * &plan.frame.inv_sqrt;
            let radius = matops::symmetrize(&normalized)
                .symmetric_eigenvalues()
                .iter()
                .map(|l| l.abs())
                .fold(0.0, f64::max);
            Ok(DiagnosticRow {
                t,
                norm,
                radius,
                normalized_norm: matops::operator_norm(&normalized),
            })
        })
        .collect()
}
