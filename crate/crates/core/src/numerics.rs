//! Dense linear algebra: spectra, Hurwitz and PBH tests, Sylvester solves.

use nalgebra::{Complex, DMatrix, Schur, SymmetricEigen, SVD};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;

/// Default relative singular-value tolerance for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

const SCHUR_EPS: f64 = 1e-14;
const MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
    #[error("Sylvester equation is singular: eigenvalue {0} is shared by both coefficients")]
    SingularPencil(Complex<f64>),
    #[error("Sylvester solve residual {residual:e} exceeds bound {bound:e}")]
    InaccurateSolve { residual: f64, bound: f64 },
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
}

/// Eigenvalues with multiplicity.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex<f64>>,
    pub max_real_part: f64,
}

impl Spectrum {
    fn new(eigenvalues: Vec<Complex<f64>>) -> Self {
        let max_real_part = eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        Spectrum { eigenvalues, max_real_part }
    }

    /// Real parts sorted from largest to smallest.
    pub fn sorted_real_parts(&self) -> Vec<f64> {
        let mut re: Vec<f64> = self.eigenvalues.iter().map(|z| z.re).collect();
        re.sort_by(|a, b| b.total_cmp(a));
        re
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

pub fn ensure_square(m: &Matrix) -> Result<usize, NumericsError> {
    if m.nrows() != m.ncols() {
        return Err(NumericsError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(m.nrows())
}

pub fn ensure_finite(m: &Matrix) -> Result<(), NumericsError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite)
    }
}

/// Largest absolute entry; zero for empty matrices.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn eigenvalues(m: &Matrix) -> Result<Spectrum, NumericsError> {
    let n = ensure_square(m)?;
    ensure_finite(m)?;
    if n == 0 {
        return Ok(Spectrum { eigenvalues: Vec::new(), max_real_part: f64::NEG_INFINITY });
    }
    let schur =
        Schur::try_new(m.clone(), SCHUR_EPS, MAX_ITERATIONS).ok_or(NumericsError::NoConvergence)?;
    Ok(Spectrum::new(schur.complex_eigenvalues().iter().copied().collect()))
}

/// True iff every eigenvalue has real part strictly below `-margin`.
pub fn is_hurwitz(m: &Matrix, margin: f64) -> Result<bool, NumericsError> {
    Ok(eigenvalues(m)?.max_real_part < -margin)
}

/// Eigen-decomposition of the symmetric part of `m`, eigenvalues ascending.
pub fn symmetric_eigen(m: &Matrix) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, NumericsError> {
    ensure_square(m)?;
    ensure_finite(m)?;
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::try_new(sym, SCHUR_EPS, MAX_ITERATIONS)
        .ok_or(NumericsError::NoConvergence)?;
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = nalgebra::DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let vectors = Matrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    eig.eigenvalues = values;
    eig.eigenvectors = vectors;
    Ok(eig)
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn symmetric_extremes(m: &Matrix) -> Result<(f64, f64), NumericsError> {
    let eig = symmetric_eigen(m)?;
    let n = eig.eigenvalues.len();
    if n == 0 {
        return Ok((f64::INFINITY, f64::NEG_INFINITY));
    }
    Ok((eig.eigenvalues[0], eig.eigenvalues[n - 1]))
}

fn complex_rank(m: &DMatrix<Complex<f64>>, rel_tol: f64) -> Result<usize, NumericsError> {
    if m.is_empty() {
        return Ok(0);
    }
    let svd = SVD::try_new(m.clone(), false, false, SCHUR_EPS, MAX_ITERATIONS)
        .ok_or(NumericsError::NoConvergence)?;
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(svd.singular_values.iter().filter(|&&s| s > rel_tol * smax).count())
}

/// Rank from singular values above `rel_tol * sigma_max`.
pub fn rank(m: &Matrix, rel_tol: f64) -> Result<usize, NumericsError> {
    ensure_finite(m)?;
    if m.is_empty() {
        return Ok(0);
    }
    let svd = SVD::try_new(m.clone(), false, false, SCHUR_EPS, MAX_ITERATIONS)
        .ok_or(NumericsError::NoConvergence)?;
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(svd.singular_values.iter().filter(|&&s| s > rel_tol * smax).count())
}

fn complexify(m: &Matrix) -> DMatrix<Complex<f64>> {
    m.map(|v| Complex::new(v, 0.0))
}

/// PBH stabilizability: `rank [A - lambda I, B] = n` at every eigenvalue of
/// `A` with nonnegative real part.
pub fn pbh_stabilizable(a: &Matrix, b: &Matrix, tol: f64) -> Result<bool, NumericsError> {
    let n = ensure_square(a)?;
    if b.nrows() != n {
        return Err(NumericsError::DimensionMismatch(format!(
            "B has {} rows, A is {n}x{n}",
            b.nrows()
        )));
    }
    let spectrum = eigenvalues(a)?;
    let ac = complexify(a);
    let bc = complexify(b);
    for lambda in spectrum.eigenvalues.iter().filter(|z| z.re >= 0.0) {
        let mut pencil = DMatrix::<Complex<f64>>::zeros(n, n + b.ncols());
        pencil.view_mut((0, 0), (n, n)).copy_from(&ac);
        for i in 0..n {
            pencil[(i, i)] -= lambda;
        }
        pencil.view_mut((0, n), (n, b.ncols())).copy_from(&bc);
        if complex_rank(&pencil, tol)? < n {
            return Ok(false);
        }
    }
    Ok(true)
}

/// PBH detectability: `rank [A - lambda I; C] = n` at every eigenvalue of
/// `A` with nonnegative real part.
pub fn pbh_detectable(a: &Matrix, c: &Matrix, tol: f64) -> Result<bool, NumericsError> {
    let n = ensure_square(a)?;
    if c.ncols() != n {
        return Err(NumericsError::DimensionMismatch(format!(
            "C has {} columns, A is {n}x{n}",
            c.ncols()
        )));
    }
    let spectrum = eigenvalues(a)?;
    let ac = complexify(a);
    let cc = complexify(c);
    for lambda in spectrum.eigenvalues.iter().filter(|z| z.re >= 0.0) {
        let mut pencil = DMatrix::<Complex<f64>>::zeros(n + c.nrows(), n);
        pencil.view_mut((0, 0), (n, n)).copy_from(&ac);
        for i in 0..n {
            pencil[(i, i)] -= lambda;
        }
        pencil.view_mut((n, 0), (c.nrows(), n)).copy_from(&cc);
        if complex_rank(&pencil, tol)? < n {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Solves `X S - Ac X = rhs` for `X` (`m x r`) by Kronecker vectorization:
/// `(S^T (x) I_m - I_r (x) Ac) vec(X) = vec(rhs)`.
pub fn solve_sylvester(s: &Matrix, ac: &Matrix, rhs: &Matrix) -> Result<Matrix, NumericsError> {
    let r = ensure_square(s)?;
    let m = ensure_square(ac)?;
    if rhs.nrows() != m || rhs.ncols() != r {
        return Err(NumericsError::DimensionMismatch(format!(
            "right-hand side is {}x{}, expected {m}x{r}",
            rhs.nrows(),
            rhs.ncols()
        )));
    }
    ensure_finite(rhs)?;
    let spec_s = eigenvalues(s)?;
    let spec_a = eigenvalues(ac)?;
    for ls in &spec_s.eigenvalues {
        if let Some(shared) = spec_a.eigenvalues.iter().find(|la| (*la - ls).norm() <= 1e-9) {
            return Err(NumericsError::SingularPencil(*shared));
        }
    }
    let kron = s.transpose().kronecker(&Matrix::identity(m, m))
        - Matrix::identity(r, r).kronecker(ac);
    // Column-major storage makes the data slice equal to vec(rhs).
    let b = nalgebra::DVector::from_column_slice(rhs.as_slice());
    let sol = kron.lu().solve(&b).ok_or(NumericsError::SingularPencil(Complex::new(0.0, 0.0)))?;
    let x = Matrix::from_column_slice(m, r, sol.as_slice());
    let residual = max_abs(&(&x * s - ac * &x - rhs));
    let bound = 1e-9 * (max_abs(rhs) + max_abs(&x)).max(f64::MIN_POSITIVE);
    if residual > bound && residual > 1e-12 {
        return Err(NumericsError::InaccurateSolve { residual, bound });
    }
    Ok(x)
}

/// Solves the Lyapunov equation `Ac W + W Ac^T = -Q` through the Sylvester
/// solver (`X (-Ac^T) - Ac X = Q`). The result is symmetrized.
pub fn solve_lyapunov(ac: &Matrix, q: &Matrix) -> Result<Matrix, NumericsError> {
    let w = solve_sylvester(&(-ac.transpose()), ac, q)?;
    Ok((&w + w.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    /// Upper-triangular bilinear lift matrix of the two-state example.
    fn example_a() -> Matrix {
        let (k1, k2) = (-0.7, -0.3);
        let mut a = Matrix::zeros(10, 10);
        let entries = [
            (0, 0, k1),
            (1, 1, k2),
            (1, 2, -k2),
            (2, 2, 2.0 * k1),
            (3, 3, 2.0 * k2),
            (3, 5, -2.0 * k2),
            (4, 4, 3.0 * k2),
            (4, 7, -3.0 * k2),
            (5, 5, 2.0 * k1 + k2),
            (5, 6, -k2),
            (6, 6, 4.0 * k1),
            (7, 7, 2.0 * k1 + 2.0 * k2),
            (7, 8, -2.0 * k2),
            (8, 8, 4.0 * k1 + k2),
            (8, 9, -k2),
            (9, 9, 6.0 * k1),
        ];
        for (i, j, v) in entries {
            a[(i, j)] = v;
        }
        a
    }

    #[test]
    fn rotation_spectrum() {
        let s = mat(&[&[0.0, -4.0], &[4.0, 0.0]]);
        let sp = eigenvalues(&s).unwrap();
        assert_eq!(sp.eigenvalues.len(), 2);
        assert!(sp.max_real_part.abs() < 1e-12);
        let mut im: Vec<f64> = sp.eigenvalues.iter().map(|z| z.im).collect();
        im.sort_by(f64::total_cmp);
        assert!((im[0] + 4.0).abs() < 1e-12 && (im[1] - 4.0).abs() < 1e-12);
        assert!(!is_hurwitz(&s, 0.0).unwrap());
    }

    #[test]
    fn identity_spectrum() {
        let sp = eigenvalues(&Matrix::identity(3, 3)).unwrap();
        assert!(sp.eigenvalues.iter().all(|z| (z.re - 1.0).abs() < 1e-14 && z.im == 0.0));
    }

    #[test]
    fn triangular_lift_spectrum_is_its_diagonal() {
        let a = example_a();
        let mut got: Vec<f64> = eigenvalues(&a).unwrap().eigenvalues.iter().map(|z| z.re).collect();
        got.sort_by(f64::total_cmp);
        let mut want = vec![-0.7, -0.3, -1.4, -0.6, -0.9, -1.7, -2.8, -2.0, -3.1, -4.2];
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
        assert!(is_hurwitz(&a, 0.0).unwrap());
    }

    #[test]
    fn zero_matrix_is_not_hurwitz() {
        assert!(!is_hurwitz(&Matrix::zeros(3, 3), 0.0).unwrap());
        assert!(matches!(
            is_hurwitz(&Matrix::zeros(2, 3), 0.0),
            Err(NumericsError::NotSquare { .. })
        ));
    }

    #[test]
    fn pbh_examples() {
        let a = mat(&[&[1.0, 0.0], &[0.0, -1.0]]);
        let b = mat(&[&[0.0], &[1.0]]);
        assert!(!pbh_stabilizable(&a, &b, RANK_TOL).unwrap());
        let b2 = mat(&[&[1.0], &[0.0]]);
        assert!(pbh_stabilizable(&a, &b2, RANK_TOL).unwrap());

        let hurwitz = mat(&[&[-1.0, 2.0], &[0.0, -3.0]]);
        assert!(pbh_stabilizable(&hurwitz, &Matrix::zeros(2, 1), RANK_TOL).unwrap());
        assert!(pbh_detectable(&hurwitz, &Matrix::zeros(1, 2), RANK_TOL).unwrap());

        assert!(!pbh_detectable(&a, &mat(&[&[0.0, 1.0]]), RANK_TOL).unwrap());
        assert!(pbh_detectable(&a, &mat(&[&[1.0, 0.0]]), RANK_TOL).unwrap());
        assert!(pbh_stabilizable(&a, &Matrix::zeros(3, 1), RANK_TOL).is_err());
    }

    #[test]
    fn pbh_on_imaginary_axis_modes() {
        // Undamped oscillator driven through its second state.
        let a = mat(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        assert!(pbh_stabilizable(&a, &mat(&[&[0.0], &[1.0]]), RANK_TOL).unwrap());
        assert!(!pbh_stabilizable(&a, &Matrix::zeros(2, 1), RANK_TOL).unwrap());
    }

    #[test]
    fn sylvester_homogeneous() {
        let s = mat(&[&[0.0, -1.0], &[1.0, 0.0]]);
        let ac = -Matrix::identity(2, 2);
        let x = solve_sylvester(&s, &ac, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(max_abs(&x), 0.0);
    }

    #[test]
    fn sylvester_scalar() {
        let x = solve_sylvester(&mat(&[&[0.0]]), &mat(&[&[-2.0]]), &mat(&[&[4.0]])).unwrap();
        assert!((x[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn sylvester_rejects_shared_eigenvalues() {
        let s = mat(&[&[1.0]]);
        let ac = mat(&[&[1.0, 0.0], &[0.0, -1.0]]);
        let err = solve_sylvester(&s, &ac, &Matrix::zeros(2, 1)).unwrap_err();
        assert!(matches!(err, NumericsError::SingularPencil(_)));
    }

    #[test]
    fn sylvester_residual_on_rectangular_instance() {
        let s = mat(&[&[0.0, -4.0], &[4.0, 0.0]]);
        let ac = Matrix::from_fn(5, 5, |i, j| {
            if i == j {
                -1.0 - i as f64
            } else {
                0.3 * ((i * 7 + j * 3) % 5) as f64 - 0.6
            }
        });
        let rhs = Matrix::from_fn(5, 2, |i, j| (i as f64) - 2.0 * j as f64 + 0.5);
        let x = solve_sylvester(&s, &ac, &rhs).unwrap();
        let residual = max_abs(&(&x * &s - &ac * &x - &rhs));
        assert!(residual <= 1e-9 * (max_abs(&rhs) + max_abs(&x)));
    }

    #[test]
    fn lyapunov_solution_is_positive_definite_for_hurwitz() {
        let a = example_a();
        let w = solve_lyapunov(&a, &Matrix::identity(10, 10)).unwrap();
        let residual = max_abs(&(&a * &w + &w * a.transpose() + Matrix::identity(10, 10)));
        assert!(residual < 1e-10);
        assert!(symmetric_extremes(&w).unwrap().0 > 0.0);
    }

    #[test]
    fn rank_of_singular_matrix() {
        let m = mat(&[&[1.0, 2.0, 1.0], &[0.0, 1.0, 0.0], &[2.0, 5.0, 2.0]]);
        assert_eq!(rank(&m, RANK_TOL).unwrap(), 2);
        assert_eq!(rank(&Matrix::zeros(2, 2), RANK_TOL).unwrap(), 0);
    }
}
