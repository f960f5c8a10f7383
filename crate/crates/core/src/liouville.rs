//! Density transport under the synthesized feedback, by the method of
//! characteristics: every particle of an ensemble is integrated along the
//! closed-loop vector field, so the ensemble's empirical law follows the
//! continuity equation `∂ρ/∂t + div(ρ (Ax + B u(t,x))) = 0`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::diffeo::{DensitySpec, DiffeoSpec};
use crate::error::{Error, Result};
use crate::lti::LtiSystem;
use crate::matops::Vector;
use crate::steer::{SteeringPlan, TimeSlice};

/// Weighted point cloud standing in for a density.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub dim: usize,
    pub positions: Vec<Vector>,
    pub weights: Vec<f64>,
    pub seed: u64,
    pub source: String,
}

impl ParticleEnsemble {
    /// Uniformly weighted ensemble over the given points.
    pub fn from_points(positions: Vec<Vector>, seed: u64, source: impl Into<String>) -> Result<Self> {
        let Some(first) = positions.first() else {
            return Err(Error::Invalid("ensemble needs at least one particle".into()));
        };
        let dim = first.len();
        if positions.iter().any(|p| p.len() != dim) {
            return Err(Error::Dimension("particles differ in dimension".into()));
        }
        if positions.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("particle position".into()));
        }
        let w = 1.0 / positions.len() as f64;
        Ok(Self {
            dim,
            weights: vec![w; positions.len()],
            positions,
            seed,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Pushforward by `psi`: same weights, mapped positions.
    pub fn push_forward(&self, psi: &DiffeoSpec) -> Self {
        Self {
            dim: psi.dim(),
            positions: self.positions.par_iter().map(|x| psi.eval(x)).collect(),
            weights: self.weights.clone(),
            seed: self.seed,
            source: format!("{}#{}", self.source, psi.label()),
        }
    }

    pub fn total_weight(&self) -> f64 {
        compensated_sum(&self.weights)
    }
}

pub fn sample_ensemble(rho: &DensitySpec, count: usize, seed: u64) -> Result<ParticleEnsemble> {
    if count == 0 {
        return Err(Error::Invalid("ensemble size must be >= 1".into()));
    }
    let positions: Vec<Vector> = (0..count as u64)
        .into_par_iter()
        .map(|i| rho.sample_at(seed, i))
        .collect();
    ParticleEnsemble::from_points(positions, seed, rho.label())
}

/// Trajectory of one particle, flattened node by node.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleTrack {
    pub states: Vec<f64>,
    pub controls: Vec<f64>,
    pub failure: Option<String>,
}

/// Recorded closed-loop trajectories of an ensemble.
#[derive(Debug, Clone)]
pub struct TrajectoryBundle {
    pub plan_id: String,
    pub system: LtiSystem,
    pub horizon: f64,
    pub step: f64,
    /// Recorded nodes; always starts at 0 and ends at the horizon.
    pub times: Vec<f64>,
    pub weights: Vec<f64>,
    pub tracks: Vec<ParticleTrack>,
}

impl TrajectoryBundle {
    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.system.input_dim()
    }

    pub fn n_particles(&self) -> usize {
        self.tracks.len()
    }

    /// Number of nodes recorded for particle `p` (shorter if it failed).
    pub fn recorded_nodes(&self, p: usize) -> usize {
        self.tracks[p].states.len() / self.state_dim()
    }

    pub fn state(&self, p: usize, node: usize) -> Vector {
        let n = self.state_dim();
        Vector::from_column_slice(&self.tracks[p].states[node * n..(node + 1) * n])
    }

    pub fn control(&self, p: usize, node: usize) -> Vector {
        let m = self.input_dim();
        Vector::from_column_slice(&self.tracks[p].controls[node * m..(node + 1) * m])
    }

    pub fn is_complete(&self, p: usize) -> bool {
        self.tracks[p].failure.is_none() && self.recorded_nodes(p) == self.times.len()
    }

    pub fn n_failed(&self) -> usize {
        (0..self.n_particles()).filter(|&p| !self.is_complete(p)).count()
    }

    pub fn initial_ensemble(&self) -> Vec<Vector> {
        (0..self.n_particles()).map(|p| self.state(p, 0)).collect()
    }

    /// Terminal positions of the particles that completed.
    pub fn terminal_ensemble(&self, seed: u64) -> Result<ParticleEnsemble> {
        let last = self.times.len() - 1;
        let mut positions = Vec::new();
        let mut weights = Vec::new();
        for p in 0..self.n_particles() {
            if self.is_complete(p) {
                positions.push(self.state(p, last));
                weights.push(self.weights[p]);
            }
        }
        let mut ens = ParticleEnsemble::from_points(positions, seed, format!("terminal:{}", self.plan_id))?;
        let total: f64 = weights.iter().sum();
        ens.weights = weights.iter().map(|w| w / total).collect();
        Ok(ens)
    }

    /// CSV with header `t,particle_id,x_0..x_{n-1},u_0..u_{m-1}`, one row per
    /// (node, particle), node-major, numbers with 17 significant digits.
    /// Failed particles contribute rows only for the nodes they reached.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let n = self.state_dim();
        let m = self.input_dim();
        let mut header = vec!["t".to_string(), "particle_id".to_string()];
        header.extend((0..n).map(|i| format!("x_{i}")));
        header.extend((0..m).map(|i| format!("u_{i}")));
        writeln!(out, "{}", header.join(","))?;
        for (node, t) in self.times.iter().enumerate() {
            for (p, track) in self.tracks.iter().enumerate() {
                if node >= track.states.len() / n {
                    continue;
                }
                let mut line = format!("{},{}", fmt17(*t), p);
                for v in &track.states[node * n..(node + 1) * n] {
                    line.push(',');
                    line.push_str(&fmt17(*v));
                }
                for v in &track.controls[node * m..(node + 1) * m] {
                    line.push(',');
                    line.push_str(&fmt17(*v));
                }
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Scientific notation with 17 significant digits (round-trips any f64).
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub step: f64,
    /// Record every `record_stride`-th node; the final node is always recorded.
    pub record_stride: usize,
}

impl SimulationOptions {
    pub fn new(step: f64) -> Self {
        Self {
            step,
            record_stride: 1,
        }
    }
}

struct Grid {
    h: f64,
    steps: usize,
    nodes: Vec<TimeSlice>,
    mids: Vec<TimeSlice>,
    /// Slice at `T - 2δ`; with `nodes[steps]` at `T - δ` it extrapolates the
    /// feedback to `T` without inverting `K_T`.
    tail: TimeSlice,
}

fn build_grid(plan: &SteeringPlan, step: f64) -> Result<Grid> {
    let horizon = plan.horizon;
    if !(step > 0.0) || step > horizon / 10.0 + 1e-15 * horizon {
        return Err(Error::Invalid(format!(
            "integration step must be in (0, T/10], got {step} for T = {horizon}"
        )));
    }
    let steps = (horizon / step).round().max(1.0) as usize;
    let h = horizon / steps as f64;
    // K_T⁻¹ would invert ψ itself; the last node is evaluated just before T.
    let guard = plan.tolerances.horizon_guard * horizon.max(1.0);
    let cap = horizon - guard;
    let nodes = (0..=steps)
        .into_par_iter()
        .map(|k| plan.slice((k as f64 * h).min(cap)))
        .collect::<Result<Vec<_>>>()?;
    let mids = (0..steps)
        .into_par_iter()
        .map(|k| plan.slice(((k as f64 + 0.5) * h).min(cap)))
        .collect::<Result<Vec<_>>>()?;
    let tail = plan.slice(horizon - 2.0 * guard)?;
    Ok(Grid {
        h,
        steps,
        nodes,
        mids,
        tail,
    })
}

fn recorded_node_indices(steps: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut idx: Vec<usize> = (0..=steps).step_by(stride).collect();
    if *idx.last().unwrap() != steps {
        idx.push(steps);
    }
    idx
}

fn integrate_particle(plan: &SteeringPlan, grid: &Grid, record: &[bool], x0: &Vector) -> ParticleTrack {
    let a = plan.system.a();
    let b = plan.system.b();
    let h = grid.h;
    let mut track = ParticleTrack {
        states: Vec::new(),
        controls: Vec::new(),
        failure: None,
    };
    let mut x = x0.clone();
    // Kahan compensation for the state sum; at fine steps the increments
    // are small enough that plain accumulation would dominate the error.
    let mut carry = Vector::zeros(x0.len());
    let mut guess = x0.clone();
    let field = |slice: &TimeSlice, x: &Vector, guess: &Vector| -> Result<(Vector, Vector, Vector)> {
        let (u, inv) = plan.feedback_at(slice, x, Some(guess))?;
        Ok((a * x + b * &u, u, inv.x0))
    };
    // at the horizon: u(T) ≈ 2u(T - δ) - u(T - 2δ), exact up to O(δ²)
    let node_field = |k: usize, x: &Vector, guess: &Vector| -> Result<(Vector, Vector, Vector)> {
        if k < grid.steps {
            return field(&grid.nodes[k], x, guess);
        }
        let (u1, inv1) = plan.feedback_at(&grid.nodes[k], x, Some(guess))?;
        let (u2, _) = plan.feedback_at(&grid.tail, x, Some(&inv1.x0))?;
        let u = u1 * 2.0 - u2;
        Ok((a * x + b * &u, u, inv1.x0))
    };
    for k in 0..=grid.steps {
        let (k1, u1, g1) = match node_field(k, &x, &guess) {
            Ok(v) => v,
            Err(e) => {
                track.failure = Some(e.to_string());
                return track;
            }
        };
        if record[k] {
            track.states.extend(x.iter());
            track.controls.extend(u1.iter());
        }
        if k == grid.steps {
            break;
        }
        let stages = (|| -> Result<(Vector, Vector)> {
            let x2 = &x + &k1 * (h / 2.0);
            let (k2, _, g2) = field(&grid.mids[k], &x2, &g1)?;
            let x3 = &x + &k2 * (h / 2.0);
            let (k3, _, g3) = field(&grid.mids[k], &x3, &g2)?;
            let x4 = &x + &k3 * h;
            let (k4, _, g4) = node_field(k + 1, &x4, &g3)?;
            Ok(((&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (h / 6.0), g4))
        })();
        match stages {
            Ok((dx, g)) => {
                for i in 0..x.len() {
                    let y = dx[i] - carry[i];
                    let sum = x[i] + y;
                    carry[i] = (sum - x[i]) - y;
                    x[i] = sum;
                }
                guess = g;
            }
            Err(e) => {
                track.failure = Some(e.to_string());
                return track;
            }
        }
    }
    track
}

/// Integrates `x' = Ax + B u(t,x)` for every particle by classical RK4 on a
/// uniform grid. Particles whose `K_t` inversion fails are flagged and stop.
pub fn simulate_closed_loop(plan: &SteeringPlan, ens: &ParticleEnsemble, step: f64) -> Result<TrajectoryBundle> {
    simulate_closed_loop_with(plan, ens, SimulationOptions::new(step))
}

pub fn simulate_closed_loop_with(
    plan: &SteeringPlan,
    ens: &ParticleEnsemble,
    opts: SimulationOptions,
) -> Result<TrajectoryBundle> {
    if ens.dim != plan.state_dim() {
        return Err(Error::Dimension(format!(
            "ensemble dim {} does not match system dim {}",
            ens.dim,
            plan.state_dim()
        )));
    }
    let grid = build_grid(plan, opts.step)?;
    let recorded = recorded_node_indices(grid.steps, opts.record_stride);
    let mut record = vec![false; grid.steps + 1];
    for &i in &recorded {
        record[i] = true;
    }
    let tracks: Vec<ParticleTrack> = ens
        .positions
        .par_iter()
        .map(|x0| integrate_particle(plan, &grid, &record, x0))
        .collect();
    Ok(TrajectoryBundle {
        plan_id: plan_id(plan),
        system: plan.system.clone(),
        horizon: plan.horizon,
        step: grid.h,
        times: recorded.iter().map(|&k| k as f64 * grid.h).collect(),
        weights: ens.weights.clone(),
        tracks,
    })
}

/// Applies the single open-loop signal `u_{reference}(t)` to every particle.
/// Only the reference particle is steered to its target; the rest drift by
/// `e^{AT}(x₀ - reference)`.
pub fn simulate_open_loop(
    plan: &SteeringPlan,
    ens: &ParticleEnsemble,
    reference: &Vector,
    step: f64,
) -> Result<TrajectoryBundle> {
    let grid = build_grid(plan, step)?;
    let a = plan.system.a();
    let b = plan.system.b();
    let h = grid.h;
    let u_nodes: Vec<Vector> = grid.nodes.iter().map(|s| plan.open_loop_at(s, reference)).collect();
    let u_mids: Vec<Vector> = grid.mids.iter().map(|s| plan.open_loop_at(s, reference)).collect();
    let tracks = ens
        .positions
        .par_iter()
        .map(|x0| {
            let mut track = ParticleTrack {
                states: Vec::new(),
                controls: Vec::new(),
                failure: None,
            };
            let mut x = x0.clone();
            for k in 0..=grid.steps {
                track.states.extend(x.iter());
                track.controls.extend(u_nodes[k].iter());
                if k == grid.steps {
                    break;
                }
                let f = |x: &Vector, u: &Vector| a * x + b * u;
                let k1 = f(&x, &u_nodes[k]);
                let k2 = f(&(&x + &k1 * (h / 2.0)), &u_mids[k]);
                let k3 = f(&(&x + &k2 * (h / 2.0)), &u_mids[k]);
                let k4 = f(&(&x + &k3 * h), &u_nodes[k + 1]);
                x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            track
        })
        .collect();
    Ok(TrajectoryBundle {
        plan_id: format!("{}:open-loop", plan_id(plan)),
        system: plan.system.clone(),
        horizon: plan.horizon,
        step: h,
        times: (0..=grid.steps).map(|k| k as f64 * h).collect(),
        weights: ens.weights.clone(),
        tracks,
    })
}

fn plan_id(plan: &SteeringPlan) -> String {
    format!("{}|n={}|m={}|T={}", plan.psi.label(), plan.state_dim(), plan.input_dim(), plan.horizon)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndpointStats {
    pub max: f64,
    pub mean: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    /// `None` for particles that were flagged during simulation.
    pub per_particle: Vec<Option<f64>>,
}

/// `|x_i(T) - ψ(x_i(0))|` per completed particle.
pub fn endpoint_error(bundle: &TrajectoryBundle, psi: &DiffeoSpec) -> EndpointStats {
    let last = bundle.times.len() - 1;
    let per_particle: Vec<Option<f64>> = (0..bundle.n_particles())
        .map(|p| {
            bundle
                .is_complete(p)
                .then(|| (bundle.state(p, last) - psi.eval(&bundle.state(p, 0))).norm())
        })
        .collect();
    let ok: Vec<f64> = per_particle.iter().flatten().copied().collect();
    EndpointStats {
        max: ok.iter().copied().fold(0.0, f64::max),
        mean: if ok.is_empty() { 0.0 } else { ok.iter().sum::<f64>() / ok.len() as f64 },
        n_ok: ok.len(),
        n_failed: per_particle.len() - ok.len(),
        per_particle,
    }
}

fn weighted_mean_distance(a: &ParticleEnsemble, b: &ParticleEnsemble) -> f64 {
    // flat copy so the O(N²) inner loop does not allocate
    let flat: Vec<f64> = b.positions.iter().flat_map(|y| y.iter().copied()).collect();
    let dim = b.dim.max(1);
    let rows: Vec<f64> = a
        .positions
        .par_iter()
        .zip(a.weights.par_iter())
        .map(|(x, wx)| {
            let x = x.as_slice();
            let s: f64 = flat
                .chunks_exact(dim)
                .zip(&b.weights)
                .map(|(y, wy)| {
                    let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
                    wy * d2.sqrt()
                })
                .sum();
            wx * s
        })
        .collect();
    // summed in index order so the result does not depend on the thread count
    rows.iter().sum()
}

/// Energy distance `2E|X-Y| - E|X-X'| - E|Y-Y'|` between weighted ensembles
/// (V-statistic, so it is exactly zero for identical ensembles).
pub fn energy_distance(a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::Dimension(format!(
            "ensembles have dims {} and {}",
            a.dim, b.dim
        )));
    }
    let cross = weighted_mean_distance(a, b);
    let within_a = weighted_mean_distance(a, a);
    let within_b = weighted_mean_distance(b, b);
    Ok((2.0 * cross - within_a - within_b).max(0.0))
}

/// `½ ∫₀ᵀ Σᵢ wᵢ |uᵢ(t)|² dt` by the trapezoid rule over the recorded nodes.
pub fn transport_cost(bundle: &TrajectoryBundle) -> f64 {
    let nodes = bundle.times.len();
    let mut power = vec![0.0; nodes];
    for p in 0..bundle.n_particles() {
        if !bundle.is_complete(p) {
            continue;
        }
        for (k, slot) in power.iter_mut().enumerate() {
            *slot += bundle.weights[p] * bundle.control(p, k).norm_squared();
        }
    }
    let integral: f64 = bundle
        .times
        .windows(2)
        .zip(power.windows(2))
        .map(|(t, e)| 0.5 * (t[1] - t[0]) * (e[0] + e[1]))
        .sum();
    0.5 * integral
}

/// Largest distance between `x_i(t)` and the straight-line interpolant
/// `(1 - t/T) x_i(0) + (t/T) x_i(T)`. Only meaningful for `A = 0, B = I`.
pub fn straight_line_check(bundle: &TrajectoryBundle) -> Result<f64> {
    if !bundle.system.is_pure_integrator() {
        return Err(Error::Invalid(
            "straight-line check requires A = 0 and B = I".into(),
        ));
    }
    let last = bundle.times.len() - 1;
    let mut worst = 0.0f64;
    for p in 0..bundle.n_particles() {
        if !bundle.is_complete(p) {
            continue;
        }
        let start = bundle.state(p, 0);
        let end = bundle.state(p, last);
        for (k, t) in bundle.times.iter().enumerate() {
            let s = t / bundle.horizon;
            let line = &start + (&end - &start) * s;
            worst = worst.max((bundle.state(p, k) - line).norm());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffeo;
    use crate::matops::Matrix;
    use crate::steer::make_plan;

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    fn tanh_plan() -> SteeringPlan {
        let sys = LtiSystem::double_integrator();
        let psihat = DiffeoSpec::tanh_shift(2, 0.5).unwrap();
        let psi = diffeo::inverse_hat_transform(&psihat, &sys, 1.0).unwrap();
        make_plan(&sys, 1.0, psi).unwrap()
    }

    #[test]
    fn sampling_examples() {
        let rho = DensitySpec::standard_normal(2);
        let ens = sample_ensemble(&rho, 100_000, 3).unwrap();
        let mean = ens.positions.iter().fold(Vector::zeros(2), |a, x| a + x) / ens.len() as f64;
        assert!(mean.amax() < 3.0 / (ens.len() as f64).sqrt());
        assert!((ens.total_weight() - 1.0).abs() < 1e-12);

        let one = sample_ensemble(&rho, 1, 3).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.weights, vec![1.0]);

        assert_eq!(sample_ensemble(&rho, 500, 8).unwrap(), sample_ensemble(&rho, 500, 8).unwrap());
        assert!(sample_ensemble(&rho, 0, 8).is_err());
    }

    #[test]
    fn free_flow_target_needs_no_input() {
        let sys = LtiSystem::double_integrator();
        let psi = DiffeoSpec::free_flow(&sys, 1.0).unwrap();
        let plan = make_plan(&sys, 1.0, psi.clone()).unwrap();
        let ens = sample_ensemble(&DensitySpec::standard_normal(2), 20, 1).unwrap();
        let bundle = simulate_closed_loop(&plan, &ens, 0.01).unwrap();
        for p in 0..bundle.n_particles() {
            for k in 0..bundle.times.len() {
                assert!(bundle.control(p, k).amax() < 1e-10);
            }
        }
        assert!(endpoint_error(&bundle, &psi).max < 1e-10);
        assert!(transport_cost(&bundle) < 1e-18);
    }

    #[test]
    fn integrator_paths_are_straight() {
        let psi = DiffeoSpec::tanh_shift(2, 0.8).unwrap();
        let plan = make_plan(&LtiSystem::integrator(2), 1.0, psi.clone()).unwrap();
        let ens = sample_ensemble(&DensitySpec::standard_normal(2), 50, 2).unwrap();
        let bundle = simulate_closed_loop(&plan, &ens, 0.01).unwrap();
        assert!(straight_line_check(&bundle).unwrap() <= 1e-6);
        assert!(endpoint_error(&bundle, &psi).max <= 1e-8);

        let id_plan = make_plan(&LtiSystem::integrator(2), 1.0, DiffeoSpec::identity(2)).unwrap();
        let still = simulate_closed_loop(&id_plan, &ens, 0.05).unwrap();
        assert_eq!(straight_line_check(&still).unwrap(), 0.0);
    }

    #[test]
    fn straight_line_check_rejects_other_systems() {
        let plan = tanh_plan();
        let ens = sample_ensemble(&DensitySpec::standard_normal(2), 5, 2).unwrap();
        let bundle = simulate_closed_loop(&plan, &ens, 0.05).unwrap();
        assert!(straight_line_check(&bundle).is_err());
    }

    #[test]
    fn translation_cost_is_half_squared_shift() {
        let c = v(&[0.6, -0.8]);
        let plan = make_plan(&LtiSystem::integrator(2), 1.0, DiffeoSpec::translation(c.clone())).unwrap();
        let ens = sample_ensemble(&DensitySpec::standard_normal(2), 30, 4).unwrap();
        let bundle = simulate_closed_loop(&plan, &ens, 0.01).unwrap();
        assert!((transport_cost(&bundle) - 0.5 * c.norm_squared()).abs() < 1e-10);
    }

    #[test]
    fn double_integrator_converges_at_fourth_order() {
        let plan = tanh_plan();
        let ens = sample_ensemble(&DensitySpec::standard_normal(2), 40, 5).unwrap();
        let coarse = endpoint_error(&simulate_closed_loop(&plan, &ens, 0.02).unwrap(), &plan.psi);
        let fine = endpoint_error(&simulate_closed_loop(&plan, &ens, 0.01).unwrap(), &plan.psi);
        assert_eq!(coarse.n_failed, 0);
        let ratio = coarse.max / fine.max;
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio} ({:e} / {:e})", coarse.max, fine.max);
    }

    #[test]
    fn failures_are_flagged_and_excluded() {
        // ψ is only defined on |x| < 1.5; particles starting outside cannot be inverted
        let psi = DiffeoSpec::custom(
            1,
            "partial",
            |x| if x[0].abs() < 1.5 { x * 2.0 } else { Vector::from_element(1, f64::NAN) },
            |_| Matrix::from_element(1, 1, 2.0),
        );
        let plan = make_plan(&LtiSystem::integrator(1), 1.0, psi.clone()).unwrap();
        let ens = sample_ensemble(&DensitySpec::standard_normal(1), 40, 6).unwrap();
        let outside = ens.positions.iter().filter(|x| x[0].abs() >= 1.5).count();
        assert!(outside > 0);
        let bundle = simulate_closed_loop(&plan, &ens, 0.05).unwrap();
        let stats = endpoint_error(&bundle, &psi);
        assert_eq!(stats.n_failed, outside);
        assert_eq!(stats.n_ok, 40 - outside);
        assert!(stats.max < 1e-10);
        assert_eq!(bundle.tracks.iter().filter(|t| t.failure.is_some()).count(), outside);
        assert_eq!(stats.per_particle.iter().filter(|e| e.is_none()).count(), outside);
    }

    #[test]
    fn weights_untouched_by_simulation() {
        let plan = tanh_plan();
        let mut ens = sample_ensemble(&DensitySpec::standard_normal(2), 4, 7).unwrap();
        ens.weights = vec![0.1, 0.2, 0.3, 0.4];
        let bundle = simulate_closed_loop(&plan, &ens, 0.05).unwrap();
        assert_eq!(bundle.weights, ens.weights);
    }

    #[test]
    fn stride_keeps_final_node() {
        let plan = tanh_plan();
        let ens = sample_ensemble(&DensitySpec::standard_normal(2), 3, 7).unwrap();
        let opts = SimulationOptions { step: 0.01, record_stride: 30 };
        let bundle = simulate_closed_loop_with(&plan, &ens, opts).unwrap();
        assert_eq!(bundle.times.first(), Some(&0.0));
        assert!((bundle.times.last().unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(bundle.times.len(), 5);
        assert!(simulate_closed_loop(&plan, &ens, 0.2).is_err());
    }

    #[test]
    fn open_loop_broadcast_misses_ensemble_targets() {
        let plan = tanh_plan();
        let ens = sample_ensemble(&DensitySpec::standard_normal(2), 20, 9).unwrap();
        let reference = ens.positions[0].clone();
        let bundle = simulate_open_loop(&plan, &ens, &reference, 0.01).unwrap();
        let stats = endpoint_error(&bundle, &plan.psi);
        assert!(stats.per_particle[0].unwrap() < 1e-8);
        assert!(stats.max > 0.1);
    }

    #[test]
    fn energy_distance_examples() {
        let a = sample_ensemble(&DensitySpec::standard_normal(2), 2000, 1).unwrap();
        assert_eq!(energy_distance(&a, &a).unwrap(), 0.0);
        let b = sample_ensemble(&DensitySpec::standard_normal(2), 2000, 2).unwrap();
        let shifted = DensitySpec::gaussian(v(&[3.0, 0.0]), Matrix::identity(2, 2)).unwrap();
        let c = sample_ensemble(&shifted, 2000, 3).unwrap();
        let null = energy_distance(&a, &b).unwrap();
        let far = energy_distance(&a, &c).unwrap();
        assert!(null < 0.05);
        assert!(far > 20.0 * null);
        let one_d = sample_ensemble(&DensitySpec::standard_normal(1), 10, 1).unwrap();
        assert!(energy_distance(&a, &one_d).is_err());
    }

    #[test]
    fn energy_distance_two_point_closed_form() {
        // X = δ₀, Y = δ₁ in 1D: 2·1 - 0 - 0
        let a = ParticleEnsemble::from_points(vec![v(&[0.0])], 0, "a").unwrap();
        let b = ParticleEnsemble::from_points(vec![v(&[1.0])], 0, "b").unwrap();
        assert_eq!(energy_distance(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn csv_layout() {
        let plan = tanh_plan();
        let ens = sample_ensemble(&DensitySpec::standard_normal(2), 2, 7).unwrap();
        let bundle = simulate_closed_loop_with(&plan, &ens, SimulationOptions { step: 0.1, record_stride: 5 }).unwrap();
        let mut buf = Vec::new();
        bundle.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,particle_id,x_0,x_1,u_0");
        assert_eq!(lines.len(), 1 + 3 * 2);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields[1], "0");
        let x0: f64 = fields[2].parse().unwrap();
        assert_eq!(x0, ens.positions[0][0]);
        assert_eq!(fmt17(0.1), "1.0000000000000001e-1");
    }
}
