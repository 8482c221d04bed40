//! Recursive-descent parser for polynomial expressions.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | base ('^' uint)?
//! base   := number | ident | '(' expr ')'
//! ```
//!
//! Division is only accepted by a nonzero constant, which covers rational
//! literals such as `(1/6)`. Parameters are substituted as constants while
//! parsing.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::polynomial::Polynomial;

/// 1-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("undeclared identifier `{0}`")]
    UndeclaredIdentifier(String),
    #[error("exponent must be a non-negative integer, found `{0}`")]
    InvalidExponent(String),
    #[error("division by a non-constant expression")]
    NonConstantDivisor,
    #[error("division by zero")]
    DivisionByZero,
    #[error("missing section [{0}]")]
    MissingSection(String),
    #[error("missing key `{key}` in section [{section}]")]
    MissingKey { section: String, key: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("S must be square, found {rows} rows with row lengths {cols:?}")]
    NotSquare { rows: usize, cols: Vec<usize> },
    #[error("E must be a single row of width {expected}, found {found}")]
    WrongWidth { expected: usize, found: String },
    #[error("exosystem is not neutrally stable: max |S + S^T| = {0:e}")]
    NotSkewSymmetric(f64),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}{kind}", .location.map(|l| format!("{l}: ")).unwrap_or_default())]
pub struct ParseError {
    pub location: Option<Location>,
    pub kind: ParseErrorKind,
}

impl ParseError {
    pub fn at(location: Location, kind: ParseErrorKind) -> Self {
        ParseError { location: Some(location), kind }
    }

    pub fn global(kind: ParseErrorKind) -> Self {
        ParseError { location: None, kind }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64, String),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(_, s) => format!("number `{s}`"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of expression".into(),
        }
    }
}

fn tokenize(text: &str, origin: Location) -> Result<Vec<(Tok, Location)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let loc = |i: usize| Location { line: origin.line, column: origin.column + i };
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        let tok = match c {
            ' ' | '\t' => {
                i += 1;
                continue;
            }
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            c if c.is_ascii_digit() || c == '.' => {
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        while j < chars.len() && chars[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let s: String = chars[start..i].iter().collect();
                let v = s.parse::<f64>().map_err(|_| {
                    ParseError::at(loc(start), ParseErrorKind::Syntax(format!("malformed number `{s}`")))
                })?;
                toks.push((Tok::Num(v, s), loc(start)));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                toks.push((Tok::Ident(chars[start..i].iter().collect()), loc(start)));
                continue;
            }
            other => {
                return Err(ParseError::at(
                    loc(start),
                    ParseErrorKind::Syntax(format!("unexpected character `{other}`")),
                ))
            }
        };
        toks.push((tok, loc(start)));
        i += 1;
    }
    toks.push((Tok::End, loc(chars.len())));
    Ok(toks)
}

struct Parser<'a> {
    toks: Vec<(Tok, Location)>,
    pos: usize,
    states: &'a [String],
    params: &'a BTreeMap<String, f64>,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn loc(&self) -> Location {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, Location) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn nvars(&self) -> usize {
        self.states.len()
    }

    fn expr(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    acc = &acc + &self.term()?;
                }
                Tok::Minus => {
                    self.bump();
                    acc = &acc - &self.term()?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    acc = &acc * &self.factor()?;
                }
                Tok::Slash => {
                    let at = self.bump().1;
                    let d = self.factor()?;
                    if !d.is_constant() {
                        return Err(ParseError::at(at, ParseErrorKind::NonConstantDivisor));
                    }
                    let c = d.constant_term();
                    if c == 0.0 {
                        return Err(ParseError::at(at, ParseErrorKind::DivisionByZero));
                    }
                    acc = acc.scale(1.0 / c);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Polynomial, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(-&self.factor()?);
        }
        let base = self.base()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let at = self.loc();
        match self.bump().0 {
            Tok::Num(v, s) => {
                let integral = s.chars().all(|c| c.is_ascii_digit());
                if !integral || v > f64::from(u16::MAX) {
                    return Err(ParseError::at(at, ParseErrorKind::InvalidExponent(s)));
                }
                Ok(base.pow(v as u32))
            }
            Tok::Minus => Err(ParseError::at(at, ParseErrorKind::InvalidExponent("-".into()))),
            other => Err(ParseError::at(
                at,
                ParseErrorKind::Syntax(format!("expected exponent, found {}", other.describe())),
            )),
        }
    }

    fn base(&mut self) -> Result<Polynomial, ParseError> {
        let (tok, at) = self.bump();
        match tok {
            Tok::Num(v, _) => Ok(Polynomial::constant(self.nvars(), v)),
            Tok::Ident(name) => {
                if let Some(j) = self.states.iter().position(|s| *s == name) {
                    Ok(Polynomial::variable(self.nvars(), j))
                } else if let Some(&v) = self.params.get(&name) {
                    Ok(Polynomial::constant(self.nvars(), v))
                } else {
                    Err(ParseError::at(at, ParseErrorKind::UndeclaredIdentifier(name)))
                }
            }
            Tok::LParen => {
                let inner = self.expr()?;
                let (close, at) = self.bump();
                if close != Tok::RParen {
                    return Err(ParseError::at(
                        at,
                        ParseErrorKind::Syntax(format!("expected `)`, found {}", close.describe())),
                    ));
                }
                Ok(inner)
            }
            other => Err(ParseError::at(
                at,
                ParseErrorKind::Syntax(format!("expected a value, found {}", other.describe())),
            )),
        }
    }
}

/// Parses `text` as a polynomial in `state_names`, substituting `params`.
pub fn parse_polynomial(
    text: &str,
    state_names: &[String],
    params: &BTreeMap<String, f64>,
) -> Result<Polynomial, ParseError> {
    parse_polynomial_at(text, state_names, params, Location { line: 1, column: 1 })
}

/// Same as [`parse_polynomial`], reporting positions relative to `origin`.
pub fn parse_polynomial_at(
    text: &str,
    state_names: &[String],
    params: &BTreeMap<String, f64>,
    origin: Location,
) -> Result<Polynomial, ParseError> {
    let toks = tokenize(text, origin)?;
    let mut p = Parser { toks, pos: 0, states: state_names, params };
    if *p.peek() == Tok::End {
        return Err(ParseError::at(p.loc(), ParseErrorKind::Syntax("empty expression".into())));
    }
    let poly = p.expr()?;
    if *p.peek() != Tok::End {
        let (tok, at) = p.bump();
        return Err(ParseError::at(
            at,
            ParseErrorKind::Syntax(format!("unexpected {}", tok.describe())),
        ));
    }
    Ok(poly)
}

/// Parses a constant expression (no state variables).
pub fn parse_constant_at(
    text: &str,
    params: &BTreeMap<String, f64>,
    origin: Location,
) -> Result<f64, ParseError> {
    let p = parse_polynomial_at(text, &[], params, origin)?;
    Ok(p.constant_term())
}
