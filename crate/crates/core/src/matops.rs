//! Dense matrix kernels: exponential, SPD square roots, norms.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tolerance::Tolerances;

pub type Matrix = DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;

pub(crate) fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn ensure_square(m: &Matrix, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// A symmetric positive-semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(Matrix);

impl SpdMatrix {
    /// Validates symmetry and semidefiniteness, then stores the exact symmetrization.
    pub fn new(m: Matrix) -> Result<Self> {
        Self::with_tolerances(m, &Tolerances::default())
    }

    pub fn with_tolerances(m: Matrix, tol: &Tolerances) -> Result<Self> {
        ensure_square(&m, "SPD matrix")?;
        ensure_finite(&m, "SPD matrix")?;
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = (&m - m.transpose()).amax();
        if asym > tol.symmetry * scale {
            return Err(Error::Invalid(format!(
                "matrix is not symmetric (|M - M^T| = {asym:e})"
            )));
        }
        let sym = symmetrize(&m);
        let (min_eig, max_eig) = extreme_eigenvalues(&sym);
        if min_eig < -tol.psd_clip * max_eig.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::NotPsd { min_eig, max_eig });
        }
        Ok(Self(sym))
    }

    /// Wraps a matrix known to be symmetric PSD by construction, symmetrizing it.
    pub(crate) fn from_symmetric_unchecked(m: Matrix) -> Self {
        Self(symmetrize(&m))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Matrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        extreme_eigenvalues(&self.0).0
    }

    pub fn max_eigenvalue(&self) -> f64 {
        extreme_eigenvalues(&self.0).1
    }

    /// `S^{-1/2}`; fails when the matrix is numerically singular.
    pub fn inverse_sqrt(&self) -> Result<Matrix> {
        let eig = SymmetricEigen::new(self.0.clone());
        let max = eig.eigenvalues.max().max(0.0);
        let min = eig.eigenvalues.min();
        if max <= 0.0 || min <= Tolerances::default().psd_clip * max {
            return Err(Error::NotPsd {
                min_eig: min,
                max_eig: max,
            });
        }
        let d = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
        Ok(&eig.eigenvectors * Matrix::from_diagonal(&d) * eig.eigenvectors.transpose())
    }

    /// `S^{-1}` via the symmetric eigendecomposition.
    pub fn inverse(&self) -> Result<Matrix> {
        let eig = SymmetricEigen::new(self.0.clone());
        let max = eig.eigenvalues.max().max(0.0);
        let min = eig.eigenvalues.min();
        if max <= 0.0 || min <= Tolerances::default().psd_clip * max {
            return Err(Error::NotPsd {
                min_eig: min,
                max_eig: max,
            });
        }
        let d = eig.eigenvalues.map(|l| 1.0 / l);
        Ok(symmetrize(
            &(&eig.eigenvectors * Matrix::from_diagonal(&d) * eig.eigenvectors.transpose()),
        ))
    }
}

pub(crate) fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

fn extreme_eigenvalues(sym: &Matrix) -> (f64, f64) {
    if sym.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(sym.clone()).eigenvalues;
    (eig.min(), eig.max())
}

/// Minimum eigenvalue of a symmetric matrix (symmetrized first).
pub fn min_symmetric_eigenvalue(m: &Matrix) -> f64 {
    extreme_eigenvalues(&symmetrize(m)).0
}

// Padé coefficients and norm thresholds for scaling and squaring (Higham, 2005).
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.539398330063230e-1,
    9.504178996162932e-1,
    2.097847961257068e0,
    5.371920351148152e0,
];

fn norm1(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Low-degree diagonal Padé approximant, returns (U, V) with r = (V - U)^{-1}(V + U).
fn pade_low(a: &Matrix, b: &[f64]) -> (Matrix, Matrix) {
    let n = a.nrows();
    let ident = Matrix::identity(n, n);
    let a2 = a * a;
    let mut even = ident.clone() * b[0];
    let mut odd = ident * b[1];
    let mut power = Matrix::identity(n, n);
    for k in 1..b.len() / 2 {
        power = &power * &a2;
        even += &power * b[2 * k];
        odd += &power * b[2 * k + 1];
    }
    (a * odd, even)
}

fn pade13(a: &Matrix) -> (Matrix, Matrix) {
    let n = a.nrows();
    let b = &PADE13;
    let ident = Matrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];
    (u, v)
}

/// Matrix exponential by scaling and squaring with diagonal Padé approximants
/// up to degree 13.
pub fn expm(m: &Matrix) -> Result<Matrix> {
    ensure_square(m, "expm input")?;
    ensure_finite(m, "expm input")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let norm = norm1(m);
    let (u, v, squarings) = if norm <= THETA[0] {
        let (u, v) = pade_low(m, &PADE3);
        (u, v, 0)
    } else if norm <= THETA[1] {
        let (u, v) = pade_low(m, &PADE5);
        (u, v, 0)
    } else if norm <= THETA[2] {
        let (u, v) = pade_low(m, &PADE7);
        (u, v, 0)
    } else if norm <= THETA[3] {
        let (u, v) = pade_low(m, &PADE9);
        (u, v, 0)
    } else {
        let s = (norm / THETA[4]).log2().ceil().max(0.0);
        if s > 1000.0 {
            return Err(Error::Range(format!("expm: norm {norm:e} too large")));
        }
        let s = s as i32;
        let scaled = m * 2f64.powi(-s);
        let (u, v) = pade13(&scaled);
        (u, v, s)
    };
    let denom = &v - &u;
    let numer = &v + &u;
    let lu = denom.lu();
    let mut r = lu
        .solve(&numer)
        .ok_or_else(|| Error::Range("expm: singular Padé denominator".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
        if !r.iter().all(|x| x.is_finite()) {
            return Err(Error::Range("expm: overflow during squaring".into()));
        }
    }
    ensure_finite(&r, "expm result").map_err(|_| Error::Range("expm: overflow".into()))?;
    Ok(r)
}

/// Symmetric PSD square root via eigendecomposition. Eigenvalues in
/// `[-clip * lambda_max, 0)` are treated as zero.
pub fn spd_sqrt(s: &SpdMatrix) -> Result<SpdMatrix> {
    spd_sqrt_with(s, &Tolerances::default())
}

pub fn spd_sqrt_with(s: &SpdMatrix, tol: &Tolerances) -> Result<SpdMatrix> {
    let n = s.dim();
    if n == 0 {
        return Ok(SpdMatrix::zeros(0));
    }
    let eig = SymmetricEigen::new(s.matrix().clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min < -tol.psd_clip * max.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd {
            min_eig: min,
            max_eig: max,
        });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let r = &eig.eigenvectors * Matrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    Ok(SpdMatrix::from_symmetric_unchecked(r))
}

/// Operator 2-norm and spectral radius of a square matrix.
pub fn norm_and_radius(m: &Matrix) -> Result<(f64, f64)> {
    ensure_square(m, "norm_and_radius input")?;
    if m.nrows() == 0 {
        return Ok((0.0, 0.0));
    }
    let norm = m.singular_values().max();
    Ok((norm, spectral_radius(m)?))
}

/// Largest eigenvalue modulus. Uses a real Schur form when its (capped)
/// iteration converges and otherwise Gelfand's formula by repeated squaring.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    ensure_square(m, "spectral_radius input")?;
    if let Some(schur) = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER) {
        return Ok(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    Ok(gelfand_radius(m))
}

// rho = lim |M^(2^k)|^(2^-k); each square is renormalized and its log scale
// accumulated so the powers never overflow
fn gelfand_radius(m: &Matrix) -> f64 {
    let mut p = m.clone();
    let mut log_scale = 0.0;
    let mut weight = 1.0;
    for _ in 0..GELFAND_SQUARINGS {
        let norm = p.norm();
        if norm == 0.0 || !norm.is_finite() {
            return if norm == 0.0 { 0.0 } else { f64::INFINITY };
        }
        p /= norm;
        log_scale += weight * norm.ln();
        p = &p * &p;
        weight *= 0.5;
    }
    let tail = p.norm();
    if tail == 0.0 {
        return 0.0;
    }
    (log_scale + weight * tail.ln()).exp()
}

const GELFAND_SQUARINGS: usize = 60;
const SCHUR_MAX_ITER: usize = 1_000;

pub fn operator_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        m.singular_values().max()
    }
}

/// Smallest of the `min(rows, cols)` singular values.
pub fn min_singular_value(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().min().max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, v)
    }

    fn max_rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs() / y.abs().max(1e-300))
            .fold(0.0, f64::max)
    }

    #[test]
    fn gelfand_radius_matches_known_spectra() {
        // rotation by 90 degrees scaled by 3, Jordan block and nilpotent
        let rot = mat(2, 2, &[0.0, -3.0, 3.0, 0.0]);
        assert!((gelfand_radius(&rot) - 3.0).abs() < 1e-12);
        let jordan = mat(2, 2, &[0.5, 100.0, 0.0, 0.5]);
        assert!((gelfand_radius(&jordan) - 0.5).abs() < 1e-12);
        assert!(gelfand_radius(&mat(2, 2, &[0.0, 2.0, 0.0, 0.0])) < 1e-12);
        let sym = mat(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0]);
        assert!((gelfand_radius(&sym) - (2.0 + 2f64.sqrt())).abs() < 1e-10);
    }

    #[test]
    fn expm_zero_is_identity() {
        let e = expm(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(e, Matrix::identity(3, 3));
    }

    #[test]
    fn expm_diagonal() {
        let e = expm(&mat(2, 2, &[1.0, 0.0, 0.0, -1.0])).unwrap();
        assert!((e[(0, 0)] - 1f64.exp()).abs() <= 1e-12 * 1f64.exp());
        assert!((e[(1, 1)] - (-1f64).exp()).abs() <= 1e-12 * (-1f64).exp());
        assert_eq!(e[(0, 1)], 0.0);
        assert_eq!(e[(1, 0)], 0.0);
    }

    #[test]
    fn expm_nilpotent() {
        let e = expm(&mat(2, 2, &[0.0, 1.0, 0.0, 0.0])).unwrap();
        let expected = mat(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!((e - expected).amax() < 1e-15);
    }

    #[test]
    fn expm_large_diagonal_relative_accuracy() {
        for &d in &[-50.0, -7.3, 3.1, 25.0, 50.0] {
            let e = expm(&mat(2, 2, &[d, 0.0, 0.0, d / 2.0])).unwrap();
            assert!((e[(0, 0)] / d.exp() - 1.0).abs() < 1e-12, "d = {d}");
            assert!((e[(1, 1)] / (d / 2.0).exp() - 1.0).abs() < 1e-12, "d = {d}");
        }
    }

    #[test]
    fn expm_rotation_generator() {
        // exp of [[0,-a],[a,0]] is a rotation by a.
        let a = 2.7;
        let e = expm(&mat(2, 2, &[0.0, -a, a, 0.0])).unwrap();
        let expected = mat(2, 2, &[a.cos(), -a.sin(), a.sin(), a.cos()]);
        assert!((e - expected).amax() < 1e-14);
    }

    #[test]
    fn expm_agrees_with_nalgebra_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.random_range(1..=6);
            let m = Matrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
            let ours = expm(&m).unwrap();
            let theirs = m.clone().exp();
            assert!((&ours - &theirs).amax() <= 1e-11 * theirs.amax());
        }
    }

    #[test]
    fn expm_rejects_bad_input() {
        assert!(matches!(expm(&Matrix::zeros(2, 3)), Err(Error::Dimension(_))));
        let mut m = Matrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(expm(&m), Err(Error::NonFinite(_))));
        let huge = Matrix::identity(2, 2) * 1e6;
        assert!(matches!(expm(&huge), Err(Error::Range(_))));
    }

    #[test]
    fn spd_sqrt_examples() {
        let r = spd_sqrt(&SpdMatrix::identity(3)).unwrap();
        assert!((r.matrix() - Matrix::identity(3, 3)).amax() < 1e-15);
        let r = spd_sqrt(&SpdMatrix::new(mat(2, 2, &[4.0, 0.0, 0.0, 9.0])).unwrap()).unwrap();
        assert!((r.matrix() - mat(2, 2, &[2.0, 0.0, 0.0, 3.0])).amax() < 1e-14);
    }

    /// Builds S = Q diag(l) Q^T from a random orthogonal Q (QR of a Gaussian matrix).
    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> (Matrix, Matrix, Vec<f64>) {
        let g = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q = g.qr().q();
        let l: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..5.0)).collect();
        let s = &q * Matrix::from_diagonal(&Vector::from_vec(l.clone())) * q.transpose();
        (s, q, l)
    }

    #[test]
    fn spd_sqrt_matches_constructed_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=6 {
            let (s, q, l) = random_spd(&mut rng, n);
            let roots = Vector::from_iterator(n, l.iter().map(|v| v.sqrt()));
            let oracle = &q * Matrix::from_diagonal(&roots) * q.transpose();
            let r = spd_sqrt(&SpdMatrix::new(symmetrize(&s)).unwrap()).unwrap();
            assert!((r.matrix() - &oracle).amax() < 1e-10);
            let resid = (r.matrix() * r.matrix() - &s).amax();
            assert!(resid <= 1e-10 * s.amax());
            // eigenvalues of the root are the roots of the eigenvalues
            let mut got: Vec<f64> = SymmetricEigen::new(r.matrix().clone())
                .eigenvalues
                .iter()
                .copied()
                .collect();
            let mut want: Vec<f64> = roots.iter().copied().collect();
            got.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn spd_sqrt_clips_tiny_negative_and_rejects_indefinite() {
        let near = mat(2, 2, &[1.0, 0.0, 0.0, -1e-14]);
        let r = spd_sqrt(&SpdMatrix::from_symmetric_unchecked(near)).unwrap();
        assert_eq!(r.matrix()[(1, 1)], 0.0);
        let bad = mat(2, 2, &[1.0, 0.0, 0.0, -1e-3]);
        assert!(matches!(SpdMatrix::new(bad.clone()), Err(Error::NotPsd { .. })));
        assert!(matches!(
            spd_sqrt(&SpdMatrix::from_symmetric_unchecked(bad)),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn norm_radius_examples() {
        let (nrm, rad) = norm_and_radius(&Matrix::identity(3, 3)).unwrap();
        assert!((nrm - 1.0).abs() < 1e-15 && (rad - 1.0).abs() < 1e-15);
        let (nrm, rad) = norm_and_radius(&mat(2, 2, &[0.0, 2.0, 0.0, 0.0])).unwrap();
        assert!((nrm - 2.0).abs() < 1e-14);
        assert!(rad.abs() < 1e-14);
        let (nrm, rad) = norm_and_radius(&mat(2, 2, &[0.0, -1.0, 1.0, 0.0])).unwrap();
        assert!((nrm - 1.0).abs() < 1e-14 && (rad - 1.0).abs() < 1e-14);
        assert!(norm_and_radius(&Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn min_singular_value_examples() {
        assert!((min_singular_value(&Matrix::identity(4, 4)) - 1.0).abs() < 1e-15);
        assert_eq!(min_singular_value(&mat(2, 2, &[1.0, 0.0, 2.0, 0.0])), 0.0);
        assert!((min_singular_value(&mat(2, 2, &[3.0, 0.0, 0.0, 0.5])) - 0.5).abs() < 1e-15);
    }

    fn small_matrix(max_norm: f64) -> impl Strategy<Value = Matrix> {
        (1usize..=5).prop_flat_map(move |n| {
            proptest::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
                let m = Matrix::from_vec(n, n, v);
                let nrm = operator_norm(&m).max(1e-12);
                if nrm > max_norm {
                    m * (max_norm / nrm)
                } else {
                    m
                }
            })
        })
    }

    proptest! {
        #[test]
        fn expm_inverse_property(m in small_matrix(5.0)) {
            let n = m.nrows();
            let prod = expm(&m).unwrap() * expm(&(-&m)).unwrap();
            prop_assert!((prod - Matrix::identity(n, n)).amax() < 1e-9);
        }

        #[test]
        fn expm_semigroup(m in small_matrix(3.0), s in -1.0f64..1.0, t in -1.0f64..1.0) {
            let lhs = expm(&(&m * s)).unwrap() * expm(&(&m * t)).unwrap();
            let rhs = expm(&(&m * (s + t))).unwrap();
            prop_assert!((lhs - rhs).amax() < 1e-9);
        }

        #[test]
        fn radius_never_exceeds_norm(m in small_matrix(10.0)) {
            let (nrm, rad) = norm_and_radius(&m).unwrap();
            prop_assert!(rad <= nrm + 1e-12);
        }
    }

    #[test]
    fn expm_relative_accuracy_on_random_triangular() {
        // Upper-triangular 2x2 with distinct eigenvalues has a closed form.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a: f64 = rng.random_range(-10.0..10.0);
            let d: f64 = rng.random_range(-10.0..10.0);
            let b: f64 = rng.random_range(-10.0..10.0);
            let e = expm(&mat(2, 2, &[a, b, 0.0, d])).unwrap();
            let off = b * (a.exp() - d.exp()) / (a - d);
            let expected = mat(2, 2, &[a.exp(), off, 0.0, d.exp()]);
            if (a - d).abs() > 1e-2 {
                assert!(max_rel_err(&e, &expected) < 1e-11);
            }
            assert!((e[(0, 0)] / a.exp() - 1.0).abs() < 1e-12);
            assert!((e[(1, 1)] / d.exp() - 1.0).abs() < 1e-12);
        }
    }
}
