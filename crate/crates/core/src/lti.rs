//! Linear time-invariant plants `x' = Ax + Bu`, Kalman rank test and the
//! controllability Gramian `W(0,t) = ∫_0^t e^{-Aτ} B Bᵀ e^{-Aᵀτ} dτ`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matops::{self, ensure_finite, Matrix, SpdMatrix};
use crate::tolerance::Tolerances;

#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: Matrix,
    b: Matrix,
}

impl LtiSystem {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::Dimension(format!(
                "B must have {} rows, got {}",
                a.nrows(),
                b.nrows()
            )));
        }
        ensure_finite(&a, "A")?;
        ensure_finite(&b, "B")?;
        Ok(Self { a, b })
    }

    /// `x'' = u` written as a first-order system.
    pub fn double_integrator() -> Self {
        Self {
            a: Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            b: Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
        }
    }

    /// `A = 0`, `B = I`: every state coordinate is directly actuated.
    pub fn integrator(n: usize) -> Self {
        Self {
            a: Matrix::zeros(n, n),
            b: Matrix::identity(n, n),
        }
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `e^{At}`.
    pub fn transition(&self, t: f64) -> Result<Matrix> {
        matops::expm(&(&self.a * t))
    }

    /// True for the `A = 0, B = I` integrator.
    pub fn is_pure_integrator(&self) -> bool {
        let n = self.state_dim();
        self.input_dim() == n
            && self.a.iter().all(|&v| v == 0.0)
            && self.b == Matrix::identity(n, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControllabilityReport {
    pub controllable: bool,
    pub min_sv: f64,
    pub max_sv: f64,
}

/// `[B, AB, ..., A^{n-1}B]`.
pub fn kalman_matrix(sys: &LtiSystem) -> Matrix {
    let n = sys.state_dim();
    let m = sys.input_dim();
    let mut k = Matrix::zeros(n, n * m);
    let mut block = sys.b.clone();
    for i in 0..n {
        k.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = &sys.a * block;
    }
    k
}

pub fn controllability_check(sys: &LtiSystem, tol: f64) -> Result<ControllabilityReport> {
    if sys.state_dim() == 0 {
        return Err(Error::Invalid("state dimension must be positive".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Invalid(format!("tolerance must be positive, got {tol}")));
    }
    let k = kalman_matrix(sys);
    if sys.input_dim() == 0 {
        return Ok(ControllabilityReport {
            controllable: false,
            min_sv: 0.0,
            max_sv: 0.0,
        });
    }
    let svs = k.singular_values();
    // rank n needs n nonzero singular values; a wide matrix returns min(n, nm) of them.
    let max_sv = svs.max();
    let min_sv = if svs.len() < sys.state_dim() { 0.0 } else { svs.min() };
    Ok(ControllabilityReport {
        controllable: max_sv > 0.0 && min_sv > tol * max_sv,
        min_sv,
        max_sv,
    })
}

/// Controllability check with the default relative threshold.
pub fn is_controllable(sys: &LtiSystem) -> Result<ControllabilityReport> {
    controllability_check(sys, Tolerances::default().controllability)
}

/// `W(0,t)` via one exponential of the block matrix `[[-A, BBᵀ], [0, Aᵀ]] t`.
///
/// The exponential is `[[e^{-At}, G], [0, e^{Aᵀt}]]` with
/// `G = ∫_0^t e^{-A(t-s)} BBᵀ e^{Aᵀs} ds`, so `W(0,t) = G e^{-Aᵀt} = G (e^{-At})ᵀ`.
pub fn gramian(sys: &LtiSystem, t: f64) -> Result<SpdMatrix> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Range(format!("Gramian time must be >= 0, got {t}")));
    }
    let n = sys.state_dim();
    if t == 0.0 {
        return Ok(SpdMatrix::zeros(n));
    }
    let mut block = Matrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(-&sys.a * t));
    block
        .view_mut((0, n), (n, n))
        .copy_from(&(&sys.b * sys.b.transpose() * t));
    block
        .view_mut((n, n), (n, n))
        .copy_from(&(sys.a.transpose() * t));
    let e = matops::expm(&block)?;
    let e11 = e.view((0, 0), (n, n)).into_owned();
    let e12 = e.view((0, n), (n, n)).into_owned();
    Ok(SpdMatrix::from_symmetric_unchecked(e12 * e11.transpose()))
}

/// The Gramian integrand `e^{-Aτ} B Bᵀ e^{-Aᵀτ}`.
pub fn gramian_integrand(sys: &LtiSystem, tau: f64) -> Result<Matrix> {
    let phi = matops::expm(&(-&sys.a * tau))?;
    let pb = phi * &sys.b;
    Ok(&pb * pb.transpose())
}

/// Composite Simpson quadrature of the Gramian integral. Kept as an
/// independent check on [`gramian`]. Odd step counts are rounded up.
pub fn gramian_quadrature_oracle(sys: &LtiSystem, t: f64, steps: usize) -> Result<SpdMatrix> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Range(format!("Gramian time must be >= 0, got {t}")));
    }
    if steps < 16 {
        return Err(Error::Invalid(format!("Simpson oracle needs >= 16 steps, got {steps}")));
    }
    let steps = steps + steps % 2;
    let n = sys.state_dim();
    let h = t / steps as f64;
    let mut acc = Matrix::zeros(n, n);
    for i in 0..=steps {
        let w = if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += gramian_integrand(sys, i as f64 * h)? * w;
    }
    Ok(SpdMatrix::from_symmetric_unchecked(acc * (h / 3.0)))
}

/// `W(0,t)` on a uniform grid over `[0, T]`.
#[derive(Debug, Clone)]
pub struct GramianTable {
    pub system: LtiSystem,
    pub horizon: f64,
    pub grid: Vec<f64>,
    pub values: Vec<SpdMatrix>,
}

pub fn gramian_table(sys: &LtiSystem, horizon: f64, intervals: usize) -> Result<GramianTable> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Range(format!("horizon must be > 0, got {horizon}")));
    }
    if intervals < 2 {
        return Err(Error::Invalid(format!(
            "Gramian table needs at least 2 intervals, got {intervals}"
        )));
    }
    let grid: Vec<f64> = (0..=intervals)
        .map(|i| horizon * i as f64 / intervals as f64)
        .collect();
    let values = grid
        .iter()
        .map(|&t| gramian(sys, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(GramianTable {
        system: sys.clone(),
        horizon,
        grid,
        values,
    })
}

impl GramianTable {
    /// Smallest eigenvalue of `W(0,t_{i+1}) - W(0,t_i)` over consecutive nodes.
    /// PSD order along the grid holds iff this is `>= -slack`.
    pub fn min_increment_eigenvalue(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| matops::min_symmetric_eigenvalue(&(w[1].matrix() - w[0].matrix())))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.min_increment_eigenvalue() >= -slack
    }
}
