//! Lyapunov shape-matrix certificates for the closed-loop error dynamics
//! `p' = Ac p + Ntilde p (Htilde p)`.
//!
//! A symmetric `W > 0` certifies regional stability when, for some `eps > 0`,
//!
//! ```text
//! [ W Ac^T + Ac W + eps Ntilde W Ntilde^T   W Htilde^T ]
//! [ Htilde W                                -eps I     ]  < 0
//! ```
//!
//! and `p^T W^-1 p <= 1` describes the certified basin. The block is affine in
//! `W` for fixed `eps`, so `eps` is gridded and `W` is found by projected
//! subgradient descent on the largest eigenvalue. [`verify_certificate`] is
//! the ground truth for every certificate, however it was produced.

use nalgebra::DVector;
use thiserror::Error;

use crate::numerics::{self, Matrix, NumericsError};

pub const DELTA_W: f64 = 1e-8;
pub const DELTA_M: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 10_000;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmiError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("epsilon grid is empty")]
    EmptyGrid,
    #[error("no feasible W at epsilon {}: best objective {:e} after {} iterations", .0.epsilon, .0.best_objective, .0.iterations)]
    Infeasible(Box<InfeasibilityReport>),
    #[error("no feasible W on the epsilon grid")]
    AllInfeasible(Vec<InfeasibilityReport>),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiProblem {
    pub ac: Matrix,
    pub n_tilde: Matrix,
    pub h_tilde: Matrix,
    pub epsilon: f64,
    pub delta_w: f64,
    pub delta_m: f64,
}

impl LmiProblem {
    pub fn new(ac: Matrix, n_tilde: Matrix, h_tilde: Matrix, epsilon: f64) -> Result<Self, LmiError> {
        let k = numerics::ensure_square(&ac)?;
        if n_tilde.shape() != (k, k) {
            return Err(LmiError::DimensionMismatch(format!(
                "Ntilde is {}x{}, expected {k}x{k}",
                n_tilde.nrows(),
                n_tilde.ncols()
            )));
        }
        if h_tilde.ncols() != k || h_tilde.nrows() == 0 {
            return Err(LmiError::DimensionMismatch(format!(
                "Htilde is {}x{}, expected q x {k}",
                h_tilde.nrows(),
                h_tilde.ncols()
            )));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(LmiError::InvalidEpsilon(epsilon));
        }
        for m in [&ac, &n_tilde, &h_tilde] {
            numerics::ensure_finite(m)?;
        }
        Ok(LmiProblem { ac, n_tilde, h_tilde, epsilon, delta_w: DELTA_W, delta_m: DELTA_M })
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, LmiError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(LmiError::InvalidEpsilon(epsilon));
        }
        Ok(LmiProblem { epsilon, ..self.clone() })
    }

    /// Dimension of `W`.
    pub fn dim(&self) -> usize {
        self.ac.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiCertificate {
    pub w: Matrix,
    pub epsilon: f64,
    pub lambda_min_w: f64,
    pub lambda_max_block: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification {
    pub valid: bool,
    pub lambda_min_w: f64,
    pub lambda_max_block: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityReport {
    pub epsilon: f64,
    /// Smallest value of the solver objective; feasibility needs it `<= 0`.
    pub best_objective: f64,
    pub best_lambda_max_block: f64,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Step length of the first subgradient step relative to `||W||_F`.
    pub initial_step: f64,
    /// When set, also require `p^T W^-1 p <= 1` for this point.
    pub basin_target: Option<DVector<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iterations: MAX_ITERATIONS, initial_step: 0.5, basin_target: None }
    }
}

fn asymmetry(m: &Matrix) -> f64 {
    numerics::max_abs(&(m - m.transpose()))
}

fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Assembles the certificate block for a symmetric `W`. The result is exactly
/// symmetric.
pub fn assemble_block(w: &Matrix, problem: &LmiProblem) -> Result<Matrix, LmiError> {
    let k = problem.dim();
    if w.shape() != (k, k) {
        return Err(LmiError::DimensionMismatch(format!(
            "W is {}x{}, expected {k}x{k}",
            w.nrows(),
            w.ncols()
        )));
    }
    let q = problem.h_tilde.nrows();
    let top = w * problem.ac.transpose()
        + &problem.ac * w
        + &problem.n_tilde * w * problem.n_tilde.transpose() * problem.epsilon;
    let off = w * problem.h_tilde.transpose();
    let mut block = Matrix::zeros(k + q, k + q);
    block.view_mut((0, 0), (k, k)).copy_from(&symmetrize(&top));
    block.view_mut((0, k), (k, q)).copy_from(&off);
    block.view_mut((k, 0), (q, k)).copy_from(&off.transpose());
    for i in 0..q {
        block[(k + i, k + i)] = -problem.epsilon;
    }
    Ok(block)
}

/// Recomputes both eigenvalue margins of a certificate from scratch.
pub fn verify_certificate(cert: &LmiCertificate, problem: &LmiProblem) -> Verification {
    let invalid = Verification {
        valid: false,
        lambda_min_w: f64::NAN,
        lambda_max_block: f64::NAN,
    };
    if cert.epsilon != problem.epsilon || asymmetry(&cert.w) > 0.0 {
        return invalid;
    }
    let Ok(block) = assemble_block(&cert.w, problem) else {
        return invalid;
    };
    let (Ok((lambda_min_w, _)), Ok((_, lambda_max_block))) =
        (numerics::symmetric_extremes(&cert.w), numerics::symmetric_extremes(&block))
    else {
        return invalid;
    };
    Verification {
        valid: lambda_min_w >= problem.delta_w && lambda_max_block <= -problem.delta_m,
        lambda_min_w,
        lambda_max_block,
    }
}

/// Projects onto `{W = W^T : lambda_min(W) >= 2 delta_w}` by eigenvalue
/// clipping. The doubled floor keeps round-off from the reconstruction above
/// `delta_w`.
fn project(w: &Matrix, delta_w: f64) -> Result<Matrix, LmiError> {
    let eig = numerics::symmetric_eigen(w)?;
    let floor = 2.0 * delta_w;
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return Ok(symmetrize(w));
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    Ok(symmetrize(&(v * Matrix::from_diagonal(&clipped) * v.transpose())))
}

struct Evaluation {
    objective: f64,
    lambda_max_block: f64,
    subgradient: Matrix,
}

/// Objective `max(lambda_max(block) + delta_m, -lambda_min(containment))`
/// with a subgradient with respect to `W`. Feasible iff `objective <= 0`.
fn evaluate(w: &Matrix, problem: &LmiProblem, target: Option<&DVector<f64>>) -> Result<Evaluation, LmiError> {
    let k = problem.dim();
    let block = assemble_block(w, problem)?;
    let eig = numerics::symmetric_eigen(&block)?;
    let top = eig.eigenvalues.len() - 1;
    let lambda_max_block = eig.eigenvalues[top];
    let v = eig.eigenvectors.column(top);
    let a = v.rows(0, k).into_owned();
    let b = v.rows(k, v.len() - k).into_owned();
    let aat = &a * a.transpose();
    let na = problem.n_tilde.transpose() * &a;
    let hb = problem.h_tilde.transpose() * &b;
    let cross = &a * hb.transpose();
    let mut subgradient = &aat * &problem.ac
        + problem.ac.transpose() * &aat
        + &na * na.transpose() * problem.epsilon
        + &cross
        + cross.transpose();
    let mut objective = lambda_max_block + problem.delta_m;

    if let Some(p0) = target {
        let mut cont = Matrix::zeros(k + 1, k + 1);
        cont[(0, 0)] = 1.0;
        for i in 0..k {
            cont[(0, i + 1)] = p0[i];
            cont[(i + 1, 0)] = p0[i];
        }
        cont.view_mut((1, 1), (k, k)).copy_from(w);
        let ceig = numerics::symmetric_eigen(&cont)?;
        let violation = -ceig.eigenvalues[0];
        if violation > objective {
            objective = violation;
            let u = ceig.eigenvectors.column(0).rows(1, k).into_owned();
            subgradient = -(&u * u.transpose());
        }
    }
    Ok(Evaluation { objective, lambda_max_block, subgradient: symmetrize(&subgradient) })
}

fn certificate(w: Matrix, problem: &LmiProblem) -> Result<LmiCertificate, LmiError> {
    let (lambda_min_w, _) = numerics::symmetric_extremes(&w)?;
    let block = assemble_block(&w, problem)?;
    let (_, lambda_max_block) = numerics::symmetric_extremes(&block)?;
    Ok(LmiCertificate { w, epsilon: problem.epsilon, lambda_min_w, lambda_max_block })
}

/// Searches for a certificate at the problem's fixed `eps`.
///
/// Starts from the Lyapunov solution of `Ac W + W Ac^T = -I`, rescales it by
/// powers of two, then runs normalized projected subgradient steps with a
/// `1/k` schedule. Only certificates accepted by [`verify_certificate`] are
/// returned.
pub fn solve_feasibility(problem: &LmiProblem, options: &SolverOptions) -> Result<LmiCertificate, LmiError> {
    let k = problem.dim();
    let target = options.basin_target.as_ref();
    if let Some(p0) = target {
        if p0.len() != k {
            return Err(LmiError::DimensionMismatch(format!(
                "basin target has length {}, expected {k}",
                p0.len()
            )));
        }
    }
    let mut warnings = Vec::new();
    let identity = Matrix::identity(k, k);
    let w0 = if numerics::is_hurwitz(&problem.ac, 0.0)? {
        numerics::solve_lyapunov(&problem.ac, &identity).unwrap_or_else(|_| identity.clone())
    } else {
        warnings.push("Ac is not Hurwitz; starting from W = I".to_string());
        identity.clone()
    };
    let w0 = project(&w0, problem.delta_w)?;

    let accept = |w: Matrix| -> Result<Option<LmiCertificate>, LmiError> {
        let cert = certificate(w, problem)?;
        let basin_ok = match target {
            Some(p0) => in_basin(p0, &cert.w).map(|(inside, _)| inside).unwrap_or(false),
            None => true,
        };
        Ok((verify_certificate(&cert, problem).valid && basin_ok).then_some(cert))
    };

    let mut best_w = w0.clone();
    let mut best = evaluate(&w0, problem, target)?;
    for e in -40..=20 {
        let w = project(&(&w0 * 2f64.powi(e)), problem.delta_w)?;
        let eval = evaluate(&w, problem, target)?;
        if eval.objective < best.objective {
            best = eval;
            best_w = w;
        }
    }
    if best.objective <= 0.0 {
        if let Some(cert) = accept(best_w.clone())? {
            return Ok(cert);
        }
    }

    let scale = best_w.norm().max(problem.delta_w) * options.initial_step;
    let mut w = best_w.clone();
    let mut current = evaluate(&w, problem, target)?;
    let mut iterations = 0;
    for it in 1..=options.max_iterations {
        iterations = it;
        let norm = current.subgradient.norm();
        if norm == 0.0 || !norm.is_finite() {
            break;
        }
        let step = scale / it as f64;
        w = project(&(&w - &current.subgradient * (step / norm)), problem.delta_w)?;
        current = evaluate(&w, problem, target)?;
        if current.objective < best.objective {
            best_w = w.clone();
            best = evaluate(&w, problem, target)?;
            if best.objective <= 0.0 {
                if let Some(cert) = accept(best_w.clone())? {
                    return Ok(cert);
                }
            }
        }
    }
    Err(LmiError::Infeasible(Box::new(InfeasibilityReport {
        epsilon: problem.epsilon,
        best_objective: best.objective,
        best_lambda_max_block: best.lambda_max_block,
        iterations,
        warnings,
    })))
}

/// Solves at every grid point and keeps the certificate with the most negative
/// block eigenvalue; ties go to the smaller `eps`.
pub fn epsilon_search(
    template: &LmiProblem,
    grid: &[f64],
    options: &SolverOptions,
) -> Result<LmiCertificate, LmiError> {
    if grid.is_empty() {
        return Err(LmiError::EmptyGrid);
    }
    let mut best: Option<LmiCertificate> = None;
    let mut failures = Vec::new();
    for &eps in grid {
        let problem = template.with_epsilon(eps)?;
        match solve_feasibility(&problem, options) {
            Ok(cert) => {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        cert.lambda_max_block < b.lambda_max_block
                            || (cert.lambda_max_block == b.lambda_max_block && cert.epsilon < b.epsilon)
                    }
                };
                if better {
                    best = Some(cert);
                }
            }
            Err(LmiError::Infeasible(report)) => failures.push(*report),
            Err(err) => return Err(err),
        }
    }
    best.ok_or(LmiError::AllInfeasible(failures))
}

/// Evaluates `p0^T W^-1 p0` by a Cholesky solve; inside iff the value is at
/// most one.
pub fn in_basin(p0: &DVector<f64>, w: &Matrix) -> Result<(bool, f64), LmiError> {
    let k = numerics::ensure_square(w)?;
    if p0.len() != k {
        return Err(LmiError::DimensionMismatch(format!(
            "point has length {}, W is {k}x{k}",
            p0.len()
        )));
    }
    let a = asymmetry(w);
    if a > SYMMETRY_TOL * numerics::max_abs(w).max(1.0) {
        return Err(LmiError::NotSymmetric(a));
    }
    let chol = symmetrize(w).cholesky().ok_or(LmiError::NotPositiveDefinite)?;
    let value = p0.dot(&chol.solve(p0));
    Ok((value <= 1.0, value))
}
