//! System specification language and polynomial algebra.

mod parser;
mod polynomial;

use std::collections::BTreeMap;

use nalgebra::DMatrix;

pub use parser::{
    parse_constant_at, parse_polynomial, parse_polynomial_at, Location, ParseError, ParseErrorKind,
};
pub use polynomial::{Monomial, PolyError, Polynomial, ZERO_TOL};

use crate::regulator::{check_neutral_stability, ExosystemSpec};

/// A polynomial control-affine plant `x' = f(x) + g(x)(u + v)`, `y = h(x)`
/// with scalar input `u`, scalar matched disturbance `v = E w` generated by
/// `w' = S w`, and an ordered dictionary of observables.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySystemSpec {
    pub state_names: Vec<String>,
    pub f: Vec<Polynomial>,
    pub g: Vec<Polynomial>,
    pub h: Vec<Polynomial>,
    pub params: BTreeMap<String, f64>,
    pub exosystem: ExosystemSpec,
    pub dictionary: Vec<Polynomial>,
}

impl PolySystemSpec {
    pub fn nstates(&self) -> usize {
        self.state_names.len()
    }

    pub fn noutputs(&self) -> usize {
        self.h.len()
    }
}

struct Entry {
    key: String,
    value: String,
    key_loc: Location,
    value_loc: Location,
}

const SECTIONS: [&str; 4] = ["system", "params", "exosystem", "dictionary"];

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Splits `text` (starting at `origin`) on `sep`, returning trimmed pieces
/// with the location of their first character.
fn split_located(text: &str, origin: Location, sep: char) -> Vec<(String, Location)> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<char> = text.chars().collect();
    for i in 0..=chars.len() {
        if i == chars.len() || chars[i] == sep {
            let piece: String = chars[start..i].iter().collect();
            let lead = piece.chars().take_while(|c| c.is_whitespace()).count();
            out.push((
                piece.trim().to_string(),
                Location { line: origin.line, column: origin.column + start + lead },
            ));
            start = i + 1;
        }
    }
    out
}

fn collect_sections(document: &str) -> Result<BTreeMap<String, Vec<Entry>>, ParseError> {
    let mut sections: BTreeMap<String, Vec<Entry>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in document.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("");
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = line.chars().take_while(|c| c.is_whitespace()).count();
        let here = Location { line: line_no, column: indent + 1 };
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| {
                ParseError::at(here, ParseErrorKind::Syntax("unterminated section header".into()))
            })?;
            let name = name.trim().to_string();
            if !SECTIONS.contains(&name.as_str()) {
                return Err(ParseError::at(
                    here,
                    ParseErrorKind::Invalid(format!("unknown section [{name}]")),
                ));
            }
            if sections.contains_key(&name) {
                return Err(ParseError::at(
                    here,
                    ParseErrorKind::Invalid(format!("duplicate section [{name}]")),
                ));
            }
            sections.insert(name.clone(), Vec::new());
            current = Some(name);
            continue;
        }
        let Some(section) = current.as_ref() else {
            return Err(ParseError::at(
                here,
                ParseErrorKind::Syntax("content before the first section header".into()),
            ));
        };
        let Some(eq) = line.find('=') else {
            return Err(ParseError::at(here, ParseErrorKind::Syntax("expected `key = value`".into())));
        };
        let key = line[..eq].trim().to_string();
        if !is_identifier(&key) {
            return Err(ParseError::at(
                here,
                ParseErrorKind::Syntax(format!("invalid key `{key}`")),
            ));
        }
        let after = &line[eq + 1..];
        let lead = after.chars().take_while(|c| c.is_whitespace()).count();
        let value_col = line[..eq + 1].chars().count() + lead + 1;
        let entries = sections.get_mut(section).expect("section registered");
        if entries.iter().any(|e| e.key == key) {
            return Err(ParseError::at(
                here,
                ParseErrorKind::Invalid(format!("duplicate key `{key}` in [{section}]")),
            ));
        }
        entries.push(Entry {
            key,
            value: after.trim().to_string(),
            key_loc: here,
            value_loc: Location { line: line_no, column: value_col },
        });
    }
    Ok(sections)
}

fn section<'a>(
    sections: &'a BTreeMap<String, Vec<Entry>>,
    name: &str,
) -> Result<&'a [Entry], ParseError> {
    sections
        .get(name)
        .map(Vec::as_slice)
        .ok_or_else(|| ParseError::global(ParseErrorKind::MissingSection(name.into())))
}

fn required<'a>(entries: &'a [Entry], section: &str, key: &str) -> Result<&'a Entry, ParseError> {
    entries.iter().find(|e| e.key == key).ok_or_else(|| {
        ParseError::global(ParseErrorKind::MissingKey { section: section.into(), key: key.into() })
    })
}

fn reject_unknown(entries: &[Entry], section: &str, known: &[&str]) -> Result<(), ParseError> {
    match entries.iter().find(|e| !known.contains(&e.key.as_str())) {
        Some(e) => Err(ParseError::at(
            e.key_loc,
            ParseErrorKind::Invalid(format!("unknown key `{}` in [{section}]", e.key)),
        )),
        None => Ok(()),
    }
}

fn parse_poly_list(
    entry: &Entry,
    states: &[String],
    params: &BTreeMap<String, f64>,
) -> Result<Vec<Polynomial>, ParseError> {
    split_located(&entry.value, entry.value_loc, ';')
        .into_iter()
        .map(|(text, loc)| parse_polynomial_at(&text, states, params, loc))
        .collect()
}

fn parse_matrix_rows(
    entry: &Entry,
    params: &BTreeMap<String, f64>,
) -> Result<Vec<Vec<f64>>, ParseError> {
    split_located(&entry.value, entry.value_loc, ';')
        .into_iter()
        .map(|(row, loc)| {
            split_located(&row, loc, ',')
                .into_iter()
                .map(|(cell, cloc)| parse_constant_at(&cell, params, cloc))
                .collect()
        })
        .collect()
}

/// Parses and validates a sectioned system specification document.
pub fn parse_system_spec(document: &str) -> Result<PolySystemSpec, ParseError> {
    let sections = collect_sections(document)?;

    let mut params = BTreeMap::new();
    if let Some(entries) = sections.get("params") {
        for e in entries {
            let v = parse_constant_at(&e.value, &params, e.value_loc)?;
            params.insert(e.key.clone(), v);
        }
    }

    let system = section(&sections, "system")?;
    reject_unknown(system, "system", &["states", "f", "g", "h"])?;
    let states_entry = required(system, "system", "states")?;
    let mut state_names = Vec::new();
    for (name, loc) in split_located(&states_entry.value, states_entry.value_loc, ',') {
        if !is_identifier(&name) {
            return Err(ParseError::at(
                loc,
                ParseErrorKind::Syntax(format!("invalid state name `{name}`")),
            ));
        }
        if state_names.contains(&name) {
            return Err(ParseError::at(
                loc,
                ParseErrorKind::Invalid(format!("duplicate state `{name}`")),
            ));
        }
        if params.contains_key(&name) {
            return Err(ParseError::at(
                loc,
                ParseErrorKind::Invalid(format!("`{name}` is both a state and a parameter")),
            ));
        }
        state_names.push(name);
    }
    let n = state_names.len();

    let f = parse_poly_list(required(system, "system", "f")?, &state_names, &params)?;
    let g = parse_poly_list(required(system, "system", "g")?, &state_names, &params)?;
    let h = parse_poly_list(required(system, "system", "h")?, &state_names, &params)?;
    for (name, list) in [("f", &f), ("g", &g)] {
        if list.len() != n {
            return Err(ParseError::at(
                required(system, "system", name)?.key_loc,
                ParseErrorKind::DimensionMismatch(format!(
                    "{name} has {} components but {n} states are declared",
                    list.len()
                )),
            ));
        }
    }

    let exo = section(&sections, "exosystem")?;
    reject_unknown(exo, "exosystem", &["S", "E"])?;
    let s_entry = required(exo, "exosystem", "S")?;
    let s_rows = parse_matrix_rows(s_entry, &params)?;
    let r = s_rows.len();
    if s_rows.iter().any(|row| row.len() != r) {
        return Err(ParseError::at(
            s_entry.value_loc,
            ParseErrorKind::NotSquare { rows: r, cols: s_rows.iter().map(Vec::len).collect() },
        ));
    }
    let e_entry = required(exo, "exosystem", "E")?;
    let e_rows = parse_matrix_rows(e_entry, &params)?;
    if e_rows.len() != 1 || e_rows[0].len() != r {
        let found = e_rows.iter().map(|row| row.len().to_string()).collect::<Vec<_>>().join(";");
        return Err(ParseError::at(
            e_entry.value_loc,
            ParseErrorKind::WrongWidth { expected: r, found },
        ));
    }
    let s = DMatrix::from_fn(r, r, |i, j| s_rows[i][j]);
    let e = DMatrix::from_row_slice(1, r, &e_rows[0]);
    if !check_neutral_stability(&s).map_err(|err| {
        ParseError::at(s_entry.value_loc, ParseErrorKind::Invalid(err.to_string()))
    })? {
        let skew = (&s + s.transpose()).amax();
        return Err(ParseError::at(s_entry.value_loc, ParseErrorKind::NotSkewSymmetric(skew)));
    }

    let dict = section(&sections, "dictionary")?;
    reject_unknown(dict, "dictionary", &["obs"])?;
    let dictionary = parse_poly_list(required(dict, "dictionary", "obs")?, &state_names, &params)?;

    Ok(PolySystemSpec {
        state_names,
        f,
        g,
        h,
        params,
        exosystem: ExosystemSpec { s, e },
        dictionary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const EXAMPLE: &str = include_str!("../../../../specs/example.spec");

    #[test]
    fn example_document() {
        let spec = parse_system_spec(EXAMPLE).unwrap();
        assert_eq!(spec.nstates(), 2);
        assert_eq!(spec.noutputs(), 1);
        assert_eq!(spec.exosystem.s.nrows(), 2);
        assert_eq!(spec.dictionary.len(), 10);
        assert_eq!(spec.params["k1"], -0.7);
        assert_eq!(spec.f[0].coefficient(&Monomial::new(vec![1, 0])), -0.7);
    }

    #[test]
    fn f_length_mismatch() {
        let doc = EXAMPLE.replace("f = k1*x1 ; k2*(x2 - x1^2)", "f = k1*x1");
        let err = parse_system_spec(&doc).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::DimensionMismatch(_)), "{err}");
    }

    #[test]
    fn skew_symmetry_is_enforced() {
        let doc = EXAMPLE.replace("S = 0, -4 ; 4, 0", "S = 0, -4 ; 3, 0");
        let err = parse_system_spec(&doc).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::NotSkewSymmetric(_)), "{err}");
    }

    #[test]
    fn exosystem_shapes() {
        let doc = EXAMPLE.replace("S = 0, -4 ; 4, 0", "S = 0, -4 ; 4");
        let err = parse_system_spec(&doc).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::NotSquare { .. }), "{err}");
        let doc = EXAMPLE.replace("E = 1, 0", "E = 1, 0, 0");
        let err = parse_system_spec(&doc).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::WrongWidth { expected: 2, .. }), "{err}");
    }

    #[test]
    fn missing_section() {
        let doc = EXAMPLE.replace("[dictionary]", "").replace("obs =", "# obs =");
        let err = parse_system_spec(&doc).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::MissingSection("dictionary".into()));
    }

    #[test]
    fn expression_errors_point_into_the_document() {
        let doc = EXAMPLE.replace("h = x2 - (1/6)*x2^3", "h = x2 - (1/6)*x3^3");
        let err = parse_system_spec(&doc).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UndeclaredIdentifier("x3".into()));
        let line = EXAMPLE.lines().position(|l| l.starts_with("h =")).unwrap() + 1;
        assert_eq!(err.location, Some(Location { line, column: 16 }));
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(parse_system_spec("this is not a spec").is_err());
        assert!(parse_system_spec("").is_err());
    }
}
