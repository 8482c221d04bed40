//! Exact bilinear lifts of polynomial control-affine systems.
//!
//! A dictionary of polynomial observables `psi_1..psi_M` is closed when the
//! drift derivative of every observable, every input-direction term
//! `d psi_i / d x_j * g_j` (up to a constant), every output and every state
//! coordinate lies in its span. The lift coordinates `z = Psi(x)` then obey
//! `z' = A z + B (u + v) + N z (u + v)`, `y = C z` exactly.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector, SVD};
use thiserror::Error;

use crate::numerics::{Matrix, RANK_TOL};
use crate::polyspec::{Monomial, PolyError, PolySystemSpec, Polynomial};

/// Max-norm residual below which a polynomial counts as lying in the span.
pub const SPAN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LiftError {
    #[error("dictionary has {m} observables for {n} states; more observables than states are required")]
    TooFewObservables { m: usize, n: usize },
    #[error("dictionary observables are linearly dependent (rank {rank} < {m})")]
    LinearlyDependent { rank: usize, m: usize },
    #[error("observable {index} is the zero polynomial")]
    ZeroObservable { index: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("state {state} is not in the span of the dictionary")]
    MissingStateReadout { state: usize },
    #[error("dictionary is not closed under the dynamics")]
    ClosureViolation(Box<ClosureReport>),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// How a state coordinate is recovered from lift coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum StateReadout {
    /// `x_j = z_i`.
    Observable(usize),
    /// `x_j = sum_i c_i z_i`.
    Expansion(Vec<f64>),
}

/// An ordered, linearly independent set of polynomial observables.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    observables: Vec<Polynomial>,
    nvars: usize,
    readouts: Vec<Option<StateReadout>>,
}

impl Dictionary {
    pub fn new(observables: Vec<Polynomial>, nvars: usize) -> Result<Self, LiftError> {
        let m = observables.len();
        if m <= nvars {
            return Err(LiftError::TooFewObservables { m, n: nvars });
        }
        for (index, psi) in observables.iter().enumerate() {
            if psi.nvars() != nvars {
                return Err(LiftError::DimensionMismatch { expected: nvars, found: psi.nvars() });
            }
            if psi.is_zero() {
                return Err(LiftError::ZeroObservable { index });
            }
        }
        let (_, basis) = coefficient_matrix(&observables, &[], false);
        let rank = crate::numerics::rank(&basis, RANK_TOL).unwrap_or(0);
        if rank < m {
            return Err(LiftError::LinearlyDependent { rank, m });
        }
        let mut dict = Dictionary { observables, nvars, readouts: Vec::new() };
        dict.readouts = (0..nvars).map(|j| dict.find_readout(j)).collect();
        Ok(dict)
    }

    fn find_readout(&self, j: usize) -> Option<StateReadout> {
        let xj = Polynomial::variable(self.nvars, j);
        if let Some(i) = self.observables.iter().position(|psi| *psi == xj) {
            return Some(StateReadout::Observable(i));
        }
        let exp = span_coefficients(&xj, self, false);
        (exp.residual <= SPAN_TOL).then_some(StateReadout::Expansion(exp.coefficients))
    }

    pub fn observables(&self) -> &[Polynomial] {
        &self.observables
    }

    pub fn len(&self) -> usize {
        self.observables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observables.is_empty()
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn state_readout(&self, j: usize) -> Option<&StateReadout> {
        self.readouts.get(j).and_then(Option::as_ref)
    }
}

/// Builds the monomials-by-columns coefficient matrix of `columns`, with the
/// monomial index extended by the monomials of `extra` (and the constant
/// monomial when `with_constant`). The constant column, if requested, is last.
fn coefficient_matrix(
    columns: &[Polynomial],
    extra: &[&Polynomial],
    with_constant: bool,
) -> (Vec<Monomial>, Matrix) {
    let nvars = columns.first().map_or(0, Polynomial::nvars);
    let mut index: BTreeMap<Monomial, usize> = BTreeMap::new();
    for p in columns.iter().chain(extra.iter().copied()) {
        for (m, _) in p.terms() {
            index.entry(m.clone()).or_insert(0);
        }
    }
    if with_constant {
        index.entry(Monomial::one(nvars)).or_insert(0);
    }
    for (k, slot) in index.values_mut().enumerate() {
        *slot = k;
    }
    let ncols = columns.len() + usize::from(with_constant);
    let mut mat = Matrix::zeros(index.len(), ncols);
    for (c, p) in columns.iter().enumerate() {
        for (m, v) in p.terms() {
            mat[(index[m], c)] = v;
        }
    }
    if with_constant {
        mat[(index[&Monomial::one(nvars)], ncols - 1)] = 1.0;
    }
    (index.into_keys().collect(), mat)
}

/// Least-squares expansion of a polynomial over a dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanExpansion {
    pub coefficients: Vec<f64>,
    pub constant: f64,
    /// Max-norm of the unexplained remainder's coefficients.
    pub residual: f64,
    pub remainder: Polynomial,
}

impl SpanExpansion {
    pub fn in_span(&self) -> bool {
        self.residual <= SPAN_TOL
    }
}

fn snap(v: f64) -> f64 {
    if v.abs() <= 1e-12 {
        0.0
    } else {
        v
    }
}

/// Expands `p` over the dictionary observables (plus the constant `1` when
/// `allow_constant`) by a rank-revealing least-squares solve in monomial
/// coefficient space.
pub fn span_coefficients(p: &Polynomial, dict: &Dictionary, allow_constant: bool) -> SpanExpansion {
    let m = dict.len();
    let (monomials, phi) = coefficient_matrix(&dict.observables, &[p], allow_constant);
    let rhs = DVector::from_iterator(monomials.len(), monomials.iter().map(|mono| p.coefficient(mono)));
    let svd = SVD::new(phi.clone(), true, true);
    let tol = RANK_TOL * svd.singular_values.max();
    let sol = svd.solve(&rhs, tol).expect("SVD computed with both factors");
    let coefficients: Vec<f64> = (0..m).map(|k| snap(sol[k])).collect();
    let constant = if allow_constant { snap(sol[m]) } else { 0.0 };

    let mut fitted = DVector::from_column_slice(&coefficients);
    if allow_constant {
        fitted = fitted.push(constant);
    }
    let unexplained = &rhs - &phi * fitted;
    let residual = unexplained.amax();
    let remainder = Polynomial::from_terms(
        p.nvars(),
        monomials.into_iter().zip(unexplained.iter().copied()).filter(|(_, c)| c.abs() > SPAN_TOL),
    );
    SpanExpansion { coefficients, constant, residual, remainder }
}

/// Which expansion a closure witness refers to (zero-based indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosureSubject {
    /// Drift derivative of observable `i`.
    Drift { observable: usize },
    /// Input term `d psi_i / d x_j * g_j`.
    Input { observable: usize, state: usize },
    Output { output: usize },
    State { state: usize },
}

impl fmt::Display for ClosureSubject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ClosureSubject::Drift { observable } => write!(f, "d/dt psi{} (u = v = 0)", observable + 1),
            ClosureSubject::Input { observable, state } => {
                write!(f, "d psi{}/d x{} * g{}", observable + 1, state + 1, state + 1)
            }
            ClosureSubject::Output { output } => write!(f, "h{}", output + 1),
            ClosureSubject::State { state } => write!(f, "x{}", state + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosureWitness {
    /// Closure property number, 1 to 4.
    pub property: u8,
    pub subject: ClosureSubject,
    pub residual: f64,
    pub remainder: Polynomial,
}

/// Outcome of the four closure checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosureReport {
    /// Drift, input, output and state closure, in that order.
    pub property_ok: [bool; 4],
    /// Worst expansion residual per property.
    pub residuals: [f64; 4],
    pub witnesses: Vec<ClosureWitness>,
    pub notes: Vec<String>,
}

impl ClosureReport {
    pub fn passed(&self) -> bool {
        self.property_ok.iter().all(|&ok| ok)
    }
}

struct Analysis {
    dictionary: Dictionary,
    report: ClosureReport,
    drift: Vec<SpanExpansion>,
    /// Per observable, the input-term expansions summed over states.
    input: Vec<(f64, Vec<f64>)>,
    outputs: Vec<SpanExpansion>,
}

fn analyze(spec: &PolySystemSpec) -> Result<Analysis, LiftError> {
    let n = spec.nstates();
    for list in [&spec.f, &spec.g] {
        if list.len() != n {
            return Err(LiftError::DimensionMismatch { expected: n, found: list.len() });
        }
    }
    let dictionary = Dictionary::new(spec.dictionary.clone(), n)?;
    let m = dictionary.len();
    let mut report = ClosureReport {
        property_ok: [true; 4],
        residuals: [0.0; 4],
        witnesses: Vec::new(),
        notes: Vec::new(),
    };
    let record = |report: &mut ClosureReport, property: u8, subject, exp: &SpanExpansion| {
        let k = usize::from(property - 1);
        report.residuals[k] = report.residuals[k].max(exp.residual);
        if !exp.in_span() {
            report.property_ok[k] = false;
            report.witnesses.push(ClosureWitness {
                property,
                subject,
                residual: exp.residual,
                remainder: exp.remainder.clone(),
            });
        }
    };

    let mut drift = Vec::with_capacity(m);
    for (i, psi) in dictionary.observables().iter().enumerate() {
        let exp = span_coefficients(&psi.lie_derivative(&spec.f)?, &dictionary, false);
        record(&mut report, 1, ClosureSubject::Drift { observable: i }, &exp);
        drift.push(exp);
    }

    let mut input = Vec::with_capacity(m);
    for (i, psi) in dictionary.observables().iter().enumerate() {
        let mut b_i = 0.0;
        let mut n_i = vec![0.0; m];
        for (j, gj) in spec.g.iter().enumerate() {
            let term = psi.partial_derivative(j)?.try_mul(gj)?;
            if term.is_zero() {
                continue;
            }
            if term.is_constant() {
                report.notes.push(format!(
                    "d psi{}/d x{} * g{} is the constant {}; absorbed into B",
                    i + 1,
                    j + 1,
                    j + 1,
                    term.constant_term()
                ));
            }
            let exp = span_coefficients(&term, &dictionary, true);
            if !exp.in_span() {
                let drift_derivative = term.lie_derivative(&spec.f)?;
                let input_derivative = term.lie_derivative(&spec.g)?;
                if drift_derivative.is_zero() && input_derivative.is_zero() {
                    report.notes.push(format!(
                        "d psi{}/d x{} * g{} has zero time derivative but is outside the span; \
                         the bilinear construction still requires it",
                        i + 1,
                        j + 1,
                        j + 1
                    ));
                }
            }
            record(&mut report, 2, ClosureSubject::Input { observable: i, state: j }, &exp);
            b_i += exp.constant;
            for (acc, c) in n_i.iter_mut().zip(&exp.coefficients) {
                *acc += c;
            }
        }
        input.push((b_i, n_i));
    }

    let mut outputs = Vec::with_capacity(spec.h.len());
    for (p, hp) in spec.h.iter().enumerate() {
        if hp.nvars() != n {
            return Err(LiftError::DimensionMismatch { expected: n, found: hp.nvars() });
        }
        let exp = span_coefficients(hp, &dictionary, false);
        record(&mut report, 3, ClosureSubject::Output { output: p }, &exp);
        outputs.push(exp);
    }

    for j in 0..n {
        let exp = span_coefficients(&Polynomial::variable(n, j), &dictionary, false);
        record(&mut report, 4, ClosureSubject::State { state: j }, &exp);
    }

    Ok(Analysis { dictionary, report, drift, input, outputs })
}

/// Checks the four closure properties of the spec's dictionary.
///
/// Fails only when the dictionary itself is malformed; closure failures are
/// reported in the returned [`ClosureReport`].
pub fn check_closure(spec: &PolySystemSpec) -> Result<ClosureReport, LiftError> {
    Ok(analyze(spec)?.report)
}

/// The bilinear model `z' = A z + B (u + v) + N z (u + v)`, `y = C z`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearLift {
    pub a: Matrix,
    /// `M x 1` input column.
    pub b: Matrix,
    pub n: Matrix,
    pub c: Matrix,
    pub dictionary: Dictionary,
}

impl BilinearLift {
    /// Lift dimension `M`.
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn noutputs(&self) -> usize {
        self.c.nrows()
    }
}

pub fn build_lift(spec: &PolySystemSpec) -> Result<BilinearLift, LiftError> {
    let analysis = analyze(spec)?;
    if !analysis.report.passed() {
        return Err(LiftError::ClosureViolation(Box::new(analysis.report)));
    }
    let m = analysis.dictionary.len();
    let a = DMatrix::from_fn(m, m, |i, k| analysis.drift[i].coefficients[k]);
    let b = DMatrix::from_fn(m, 1, |i, _| analysis.input[i].0);
    let n = DMatrix::from_fn(m, m, |i, k| analysis.input[i].1[k]);
    let l = analysis.outputs.len();
    let c = DMatrix::from_fn(l, m, |p, k| analysis.outputs[p].coefficients[k]);
    Ok(BilinearLift { a, b, n, c, dictionary: analysis.dictionary })
}

/// Lift coordinates `z = Psi(x)`.
pub fn embed(x: &[f64], dict: &Dictionary) -> Result<DVector<f64>, LiftError> {
    if x.len() != dict.nvars() {
        return Err(LiftError::DimensionMismatch { expected: dict.nvars(), found: x.len() });
    }
    let values: Result<Vec<f64>, PolyError> =
        dict.observables().iter().map(|psi| psi.evaluate(x)).collect();
    Ok(DVector::from_vec(values?))
}

/// Recovers the state from lift coordinates.
pub fn project(z: &[f64], dict: &Dictionary) -> Result<DVector<f64>, LiftError> {
    if z.len() != dict.len() {
        return Err(LiftError::DimensionMismatch { expected: dict.len(), found: z.len() });
    }
    let mut x = DVector::zeros(dict.nvars());
    for j in 0..dict.nvars() {
        x[j] = match dict.state_readout(j) {
            Some(StateReadout::Observable(i)) => z[*i],
            Some(StateReadout::Expansion(c)) => c.iter().zip(z).map(|(ci, zi)| ci * zi).sum(),
            None => return Err(LiftError::MissingStateReadout { state: j }),
        };
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyspec::parse_system_spec;

    const EXAMPLE: &str = include_str!("../../../specs/example.spec");
    const TRUNCATED: &str = include_str!("../../../specs/example_truncated.spec");

    fn mono(e: &[u32]) -> Monomial {
        Monomial::new(e.to_vec())
    }

    fn example_dict() -> Dictionary {
        let spec = parse_system_spec(EXAMPLE).unwrap();
        Dictionary::new(spec.dictionary, 2).unwrap()
    }

    #[test]
    fn drift_row_of_x2() {
        let k2 = -0.3;
        let p = Polynomial::from_terms(2, [(mono(&[0, 1]), k2), (mono(&[2, 0]), -k2)]);
        let exp = span_coefficients(&p, &example_dict(), false);
        assert!(exp.residual < 1e-14);
        assert!((exp.coefficients[1] - k2).abs() < 1e-14);
        assert!((exp.coefficients[2] + k2).abs() < 1e-14);
        assert_eq!(exp.coefficients.iter().filter(|c| **c != 0.0).count(), 2);
    }

    #[test]
    fn constant_needs_constant_column() {
        let one = Polynomial::constant(2, 1.0);
        let exp = span_coefficients(&one, &example_dict(), true);
        assert!(exp.residual < 1e-14);
        assert!((exp.constant - 1.0).abs() < 1e-14);
        assert!(exp.coefficients.iter().all(|&c| c == 0.0));
        let exp = span_coefficients(&one, &example_dict(), false);
        assert!(!exp.in_span());
    }

    #[test]
    fn monomial_outside_span() {
        let p = Polynomial::from_terms(2, [(mono(&[1, 1]), 1.0)]);
        let exp = span_coefficients(&p, &example_dict(), false);
        assert!(exp.residual > 0.5);
        assert_eq!(exp.remainder, p);
    }

    #[test]
    fn example_passes_closure() {
        let spec = parse_system_spec(EXAMPLE).unwrap();
        let report = check_closure(&spec).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.residuals.iter().all(|&r| r <= 1e-12));
    }

    #[test]
    fn truncated_dictionary_fails_at_psi9() {
        let spec = parse_system_spec(TRUNCATED).unwrap();
        let report = check_closure(&spec).unwrap();
        assert!(!report.property_ok[0]);
        assert!(report.property_ok[1] && report.property_ok[2] && report.property_ok[3]);
        assert_eq!(report.witnesses.len(), 1);
        let w = &report.witnesses[0];
        assert_eq!(w.subject, ClosureSubject::Drift { observable: 8 });
        // d/dt (x1^4 x2) contains -k2 * x1^6.
        assert_eq!(w.remainder.num_terms(), 1);
        assert!((w.remainder.coefficient(&mono(&[6, 0])) - 0.3).abs() < 1e-12);
        assert!(matches!(build_lift(&spec), Err(LiftError::ClosureViolation(_))));
    }

    #[test]
    fn scalar_system_lift() {
        let x = Polynomial::variable(1, 0);
        let spec = PolySystemSpec {
            state_names: vec!["x".into()],
            f: vec![-&x],
            g: vec![Polynomial::constant(1, 1.0)],
            h: vec![x.clone()],
            params: BTreeMap::new(),
            exosystem: crate::regulator::ExosystemSpec {
                s: Matrix::zeros(1, 1),
                e: Matrix::from_element(1, 1, 1.0),
            },
            dictionary: vec![x.clone()],
        };
        assert!(matches!(build_lift(&spec), Err(LiftError::TooFewObservables { m: 1, n: 1 })));

        let spec = PolySystemSpec { dictionary: vec![x.clone(), x.pow(2)], ..spec };
        let lift = build_lift(&spec).unwrap();
        let close = |m: &Matrix, want: &[f64]| {
            let want = DMatrix::from_row_slice(m.nrows(), m.ncols(), want);
            crate::numerics::max_abs(&(m - want)) <= 1e-14
        };
        assert!(close(&lift.a, &[-1.0, 0.0, 0.0, -2.0]));
        assert!(close(&lift.b, &[1.0, 0.0]));
        assert!(close(&lift.n, &[0.0, 0.0, 2.0, 0.0]));
        assert!(close(&lift.c, &[1.0, 0.0]));
    }

    #[test]
    fn zero_input_gain_gives_zero_b_and_n() {
        let mut spec = parse_system_spec(EXAMPLE).unwrap();
        spec.g = vec![Polynomial::zero(2), Polynomial::zero(2)];
        let lift = build_lift(&spec).unwrap();
        assert_eq!(crate::numerics::max_abs(&lift.b), 0.0);
        assert_eq!(crate::numerics::max_abs(&lift.n), 0.0);
    }

    #[test]
    fn dependent_dictionary_is_rejected() {
        let x1 = Polynomial::variable(2, 0);
        let x2 = Polynomial::variable(2, 1);
        let obs = vec![x1.clone(), x2.clone(), &x1 + &x2];
        assert!(matches!(
            Dictionary::new(obs, 2),
            Err(LiftError::LinearlyDependent { rank: 2, m: 3 })
        ));
    }

    #[test]
    fn embedding_examples() {
        let dict = example_dict();
        assert_eq!(embed(&[1.0, 1.0], &dict).unwrap(), DVector::from_element(10, 1.0));
        assert_eq!(embed(&[0.0, 0.0], &dict).unwrap(), DVector::zeros(10));
        let z = embed(&[2.0, 1.0], &dict).unwrap();
        let want = [2.0, 1.0, 4.0, 1.0, 1.0, 4.0, 16.0, 4.0, 16.0, 64.0];
        assert_eq!(z.as_slice(), &want);
        assert!(embed(&[1.0], &dict).is_err());
    }

    #[test]
    fn projection_examples() {
        let dict = example_dict();
        assert_eq!(project(&[1.0; 10], &dict).unwrap().as_slice(), &[1.0, 1.0]);
        assert_eq!(project(&[0.0; 10], &dict).unwrap().as_slice(), &[0.0, 0.0]);
        let z = embed(&[0.5, -2.0], &dict).unwrap();
        assert_eq!(project(z.as_slice(), &dict).unwrap().as_slice(), &[0.5, -2.0]);
        assert!(project(&[1.0; 3], &dict).is_err());
    }

    #[test]
    fn projection_through_span_expansion() {
        let x1 = Polynomial::variable(2, 0);
        let x2 = Polynomial::variable(2, 1);
        let obs = vec![&x1 + &x2, &x1 - &x2, x1.pow(2)];
        let dict = Dictionary::new(obs, 2).unwrap();
        assert!(matches!(dict.state_readout(0), Some(StateReadout::Expansion(_))));
        let z = embed(&[0.25, -1.5], &dict).unwrap();
        let x = project(z.as_slice(), &dict).unwrap();
        assert!((x[0] - 0.25).abs() < 1e-14 && (x[1] + 1.5).abs() < 1e-14);
    }
}
