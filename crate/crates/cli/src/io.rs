//! File and JSON plumbing shared by the commands.

use std::fs;
use std::path::{Path, PathBuf};

use koopreg::lmi::LmiCertificate;
use koopreg::polyspec::{parse_system_spec, PolySystemSpec};
use koopreg::regulator::Controller;
use koopreg::Matrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub fn read_spec(path: &Path) -> Result<PolySystemSpec, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|err| CliError::Input(format!("cannot read {}: {err}", path.display())))?;
    parse_system_spec(&text).map_err(|err| CliError::Input(format!("{}: {err}", path.display())))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|err| CliError::Input(format!("cannot create {}: {err}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|err| CliError::Input(format!("cannot write {}: {err}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|err| CliError::Input(format!("cannot read {}: {err}", path.display())))?;
    serde_json::from_str(&text).map_err(|err| CliError::Input(format!("{}: {err}", path.display())))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report values serialize");
    text.push('\n');
    text
}

pub fn artifact(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(name)
}

pub fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(name: &str, rows: &[Vec<f64>]) -> Result<Matrix, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Input(format!("matrix {name} has ragged rows")));
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Matrices as `# name rows x cols` headed CSV blocks.
pub fn matrix_blocks(blocks: &[(&str, &Matrix)]) -> String {
    let mut out = String::new();
    for (name, m) in blocks {
        out.push_str(&format!("# {name} {}x{}\n", m.nrows(), m.ncols()));
        for i in 0..m.nrows() {
            let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerFile {
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(rename = "Gamma")]
    pub gamma: Vec<Vec<f64>>,
    #[serde(rename = "Sigma")]
    pub sigma: Vec<Vec<f64>>,
}

impl ControllerFile {
    pub fn new(ctrl: &Controller, sigma: &Matrix) -> Self {
        ControllerFile {
            f: rows(&ctrl.f),
            g: rows(&ctrl.g),
            h: rows(&ctrl.h),
            gamma: rows(&ctrl.gamma),
            sigma: rows(sigma),
        }
    }

    pub fn controller(&self) -> Result<(Controller, Matrix), CliError> {
        Ok((
            Controller {
                f: from_rows("F", &self.f)?,
                g: from_rows("G", &self.g)?,
                h: from_rows("H", &self.h)?,
                gamma: from_rows("Gamma", &self.gamma)?,
            },
            from_rows("Sigma", &self.sigma)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinRecord {
    pub p0: Vec<f64>,
    pub value: f64,
    pub inside: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub lambda_min_w: f64,
    pub lambda_max_block: f64,
    pub delta_w: f64,
    pub delta_m: f64,
    pub basin: Option<BasinRecord>,
}

impl CertificateFile {
    pub fn certificate(&self) -> Result<LmiCertificate, CliError> {
        Ok(LmiCertificate {
            w: from_rows("W", &self.w)?,
            epsilon: self.epsilon,
            lambda_min_w: self.lambda_min_w,
            lambda_max_block: self.lambda_max_block,
        })
    }
}
