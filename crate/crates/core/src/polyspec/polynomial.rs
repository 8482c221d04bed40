//! Sparse multivariate polynomials with real coefficients.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Coefficients with absolute value below this are dropped.
pub const ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected} variables, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("variable index {index} out of range for {nvars} variables")]
    IndexOutOfRange { index: usize, nvars: usize },
}

/// Exponent vector, one entry per state variable.
///
/// Ordered graded-lexicographically: lower total degree first, then by
/// comparing exponents of `x1`, `x2`, ... in turn.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    /// The monomial `x_j` (zero-based `j`).
    pub fn variable(nvars: usize, j: usize) -> Self {
        let mut e = vec![0; nvars];
        e[j] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_one(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    fn mul(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &xi)| xi.powi(e as i32))
            .product()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A polynomial in `nvars` real variables, kept in canonical form: no stored
/// coefficient is smaller in magnitude than [`ZERO_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::from_terms(nvars, [(Monomial::one(nvars), c)])
    }

    /// The coordinate polynomial `x_j` (zero-based `j`).
    pub fn variable(nvars: usize, j: usize) -> Self {
        Self::from_terms(nvars, [(Monomial::variable(nvars, j), 1.0)])
    }

    /// Builds a canonical polynomial, summing repeated monomials.
    ///
    /// Panics if a monomial has the wrong number of exponents.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Self
    where
        I: IntoIterator<Item = (Monomial, f64)>,
    {
        let mut map = BTreeMap::new();
        for (m, c) in terms {
            assert_eq!(m.nvars(), nvars, "monomial arity does not match polynomial");
            *map.entry(m).or_insert(0.0) += c;
        }
        let mut p = Polynomial { nvars, terms: map };
        p.prune();
        p
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| c.abs() >= ZERO_TOL);
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// True when the polynomial has no non-constant terms (zero included).
    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(Monomial::is_one)
    }

    /// Terms in ascending graded-lex order.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn constant_term(&self) -> f64 {
        self.coefficient(&Monomial::one(self.nvars))
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Largest absolute coefficient, zero for the zero polynomial.
    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |acc, c| acc.max(c.abs()))
    }

    fn check_same(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, found: other.nvars });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_same(other)?;
        let mut terms = self.terms.clone();
        for (m, c) in &other.terms {
            *terms.entry(m.clone()).or_insert(0.0) += c;
        }
        let mut p = Polynomial { nvars: self.nvars, terms };
        p.prune();
        Ok(p)
    }

    pub fn try_sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.try_add(&other.scale(-1.0))
    }

    pub fn try_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_same(other)?;
        let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                *terms.entry(ma.mul(mb)).or_insert(0.0) += ca * cb;
            }
        }
        let mut p = Polynomial { nvars: self.nvars, terms };
        p.prune();
        Ok(p)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut p = Polynomial {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect(),
        };
        p.prune();
        p
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut acc = Polynomial::constant(self.nvars, 1.0);
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    /// Formal partial derivative with respect to `x_j` (zero-based `j`).
    pub fn partial_derivative(&self, j: usize) -> Result<Polynomial, PolyError> {
        if j >= self.nvars {
            return Err(PolyError::IndexOutOfRange { index: j, nvars: self.nvars });
        }
        let terms = self.terms.iter().filter(|(m, _)| m.0[j] > 0).map(|(m, &c)| {
            let mut e = m.0.clone();
            let k = e[j];
            e[j] -= 1;
            (Monomial(e), c * f64::from(k))
        });
        Ok(Polynomial::from_terms(self.nvars, terms))
    }

    /// Lie derivative `sum_j (dp/dx_j) * field_j` of `self` along `field`.
    pub fn lie_derivative(&self, field: &[Polynomial]) -> Result<Polynomial, PolyError> {
        if field.len() != self.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, found: field.len() });
        }
        let mut acc = Polynomial::zero(self.nvars);
        for (j, fj) in field.iter().enumerate() {
            let d = self.partial_derivative(j)?;
            if d.is_zero() {
                continue;
            }
            acc = acc.try_add(&d.try_mul(fj)?)?;
        }
        Ok(acc)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64, PolyError> {
        if x.len() != self.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, found: x.len() });
        }
        Ok(self.terms.iter().map(|(m, c)| c * m.evaluate(x)).sum())
    }

    /// Renders the polynomial in the spec-file expression grammar.
    ///
    /// Coefficients are printed with the shortest representation that parses
    /// back to the same `f64`, so `parse(p.to_expr(names)) == p`.
    pub fn to_expr(&self, names: &[impl AsRef<str>]) -> String {
        assert_eq!(names.len(), self.nvars, "one name per variable");
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (idx, (m, &c)) in self.terms.iter().rev().enumerate() {
            let (sign, mag) = if c < 0.0 { ('-', -c) } else { ('+', c) };
            if idx == 0 {
                if sign == '-' {
                    out.push('-');
                }
            } else {
                out.push(' ');
                out.push(sign);
                out.push(' ');
            }
            let factors: Vec<String> = m
                .0
                .iter()
                .zip(names)
                .filter(|(&e, _)| e > 0)
                .map(|(&e, name)| match e {
                    1 => name.as_ref().to_string(),
                    _ => format!("{}^{}", name.as_ref(), e),
                })
                .collect();
            if factors.is_empty() {
                out.push_str(&format!("{mag}"));
            } else if mag == 1.0 {
                out.push_str(&factors.join("*"));
            } else {
                out.push_str(&format!("{mag}*{}", factors.join("*")));
            }
        }
        out
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = (1..=self.nvars).map(|i| format!("x{i}")).collect();
        f.write_str(&self.to_expr(&names))
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(rhs).expect("polynomial addition")
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.try_sub(rhs).expect("polynomial subtraction")
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.try_mul(rhs).expect("polynomial multiplication")
    }
}

impl Mul<f64> for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: f64) -> Polynomial {
        self.scale(rhs)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mono(e: &[u32]) -> Monomial {
        Monomial::new(e.to_vec())
    }

    fn poly(terms: &[(&[u32], f64)]) -> Polynomial {
        let n = terms.first().map_or(2, |(e, _)| e.len());
        Polynomial::from_terms(n, terms.iter().map(|(e, c)| (mono(e), *c)))
    }

    #[test]
    fn grlex_order() {
        assert!(mono(&[0, 0]) < mono(&[0, 1]));
        assert!(mono(&[0, 1]) < mono(&[1, 0]));
        assert!(mono(&[1, 0]) < mono(&[0, 2]));
        assert!(mono(&[1, 1]) < mono(&[2, 0]));
    }

    #[test]
    fn multiply_adds_exponents() {
        let a = poly(&[(&[1, 0], 1.0)]);
        let b = poly(&[(&[2, 1], 1.0)]);
        assert_eq!(&a * &b, poly(&[(&[3, 1], 1.0)]));
    }

    #[test]
    fn cancellation_gives_zero() {
        let a = poly(&[(&[0, 3], 1.0)]);
        let sum = &a + &(&a * -1.0);
        assert!(sum.is_zero());
        assert_eq!(sum, Polynomial::zero(2));
    }

    #[test]
    fn scaled_difference() {
        let x2 = Polynomial::variable(2, 1);
        let x1 = Polynomial::variable(2, 0);
        let p = (&x2 - &x1.pow(2)).scale(-0.3);
        assert_eq!(p.coefficient(&mono(&[0, 1])), -0.3);
        assert_eq!(p.coefficient(&mono(&[2, 0])), 0.3);
        assert_eq!(p.num_terms(), 2);
    }

    #[test]
    fn partial_derivatives() {
        let p = poly(&[(&[2, 1], 1.0)]);
        assert_eq!(p.partial_derivative(0).unwrap(), poly(&[(&[1, 1], 2.0)]));
        let x1 = Polynomial::variable(2, 0);
        assert!(x1.partial_derivative(1).unwrap().is_zero());
        let q = poly(&[(&[4, 1], 1.0)]);
        assert_eq!(q.partial_derivative(1).unwrap(), poly(&[(&[4, 0], 1.0)]));
        assert_eq!(
            p.partial_derivative(2),
            Err(PolyError::IndexOutOfRange { index: 2, nvars: 2 })
        );
    }

    #[test]
    fn lie_derivative_examples() {
        let k1 = -0.7;
        let k2 = -0.3;
        let x1 = Polynomial::variable(2, 0);
        let x2 = Polynomial::variable(2, 1);
        let f = vec![x1.scale(k1), (&x2 - &x1.pow(2)).scale(k2)];

        let l = x1.pow(2).lie_derivative(&f).unwrap();
        assert_eq!(l, poly(&[(&[2, 0], 2.0 * k1)]));

        let l = x2.lie_derivative(&f).unwrap();
        assert_eq!(l.coefficient(&mono(&[0, 1])), k2);
        assert_eq!(l.coefficient(&mono(&[2, 0])), -k2);

        let c = Polynomial::constant(2, 3.5);
        assert!(c.lie_derivative(&f).unwrap().is_zero());
        assert!(c.lie_derivative(&f[..1]).is_err());
    }

    #[test]
    fn evaluation() {
        let x2 = Polynomial::variable(2, 1);
        let y = &x2 - &x2.pow(3).scale(1.0 / 6.0);
        assert!((y.evaluate(&[1.0, 1.0]).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(Polynomial::zero(2).evaluate(&[3.0, -1.0]).unwrap(), 0.0);
        assert_eq!(poly(&[(&[2, 1], 1.0)]).evaluate(&[2.0, 3.0]).unwrap(), 12.0);
        assert!(y.evaluate(&[1.0]).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = Polynomial::variable(2, 0);
        let b = Polynomial::variable(3, 0);
        assert_eq!(
            a.try_add(&b),
            Err(PolyError::DimensionMismatch { expected: 2, found: 3 })
        );
        assert!(a.try_mul(&b).is_err());
    }

    #[test]
    fn tiny_coefficients_are_dropped() {
        let p = poly(&[(&[1, 0], 1e-12), (&[0, 1], 1.0)]);
        assert_eq!(p.num_terms(), 1);
    }

    #[test]
    fn expression_rendering() {
        let x2 = Polynomial::variable(2, 1);
        let y = &x2 - &x2.pow(3).scale(0.5);
        assert_eq!(y.to_expr(&["a", "b"]), "-0.5*b^3 + b");
        assert_eq!(Polynomial::zero(2).to_string(), "0");
        assert_eq!(Polynomial::constant(2, -2.0).to_string(), "-2");
    }
}
