//! Fixed-step RK4 simulation of the nonlinear plant, its bilinear lift and the
//! compact error dynamics under the internal-model controller.

use std::fmt::Write as _;

use nalgebra::DVector;
use thiserror::Error;

use crate::lift::{embed, BilinearLift, Dictionary, LiftError};
use crate::numerics::Matrix;
use crate::polyspec::{PolyError, PolySystemSpec, Polynomial};
use crate::regulator::{ClosedLoop, Controller, ExosystemSpec};

/// Any state component beyond this magnitude aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("trajectory diverged at t = {time}")]
    Diverged { time: f64, partial: Box<Trajectory> },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("trajectories are sampled on different time grids")]
    GridMismatch,
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Lift(#[from] LiftError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub step: f64,
    pub horizon: f64,
    pub record_stride: usize,
}

impl SimConfig {
    pub fn new(step: f64, horizon: f64, record_stride: usize) -> Result<Self, SimError> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(SimError::InvalidConfig(format!("step must be positive, got {step}")));
        }
        if !(horizon >= step && horizon.is_finite()) {
            return Err(SimError::InvalidConfig(format!("horizon {horizon} is shorter than the step {step}")));
        }
        if record_stride == 0 {
            return Err(SimError::InvalidConfig("record stride must be positive".into()));
        }
        Ok(SimConfig { step, horizon, record_stride })
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }

    /// Warning text when `step * rho` exceeds 0.5 for a spectral radius `rho`.
    pub fn stiffness_warning(&self, spectral_radius: f64) -> Option<String> {
        let product = self.step * spectral_radius;
        (product > 0.5).then(|| {
            format!("step {} times spectral radius {spectral_radius} is {product}, above 0.5", self.step)
        })
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { step: 1e-4, horizon: 10.0, record_stride: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub state_names: Vec<String>,
    pub output_names: Vec<String>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub inputs: Vec<f64>,
    pub disturbances: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    /// CSV with header `t,<states>,<outputs>,u,v` and 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for name in self.state_names.iter().chain(&self.output_names) {
            out.push(',');
            out.push_str(name);
        }
        out.push_str(",u,v\n");
        for k in 0..self.len() {
            let _ = write!(out, "{:.16e}", self.times[k]);
            for v in self.states[k].iter().chain(&self.outputs[k]) {
                let _ = write!(out, ",{v:.16e}");
            }
            let _ = writeln!(out, ",{:.16e},{:.16e}", self.inputs[k], self.disturbances[k]);
        }
        out
    }

    fn with_names(mut self, states: Vec<String>, outputs: Vec<String>) -> Self {
        self.state_names = states;
        self.output_names = outputs;
        self
    }
}

fn axpy(out: &mut [f64], x: &[f64], a: f64, y: &[f64]) {
    for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
        *o = xi + a * yi;
    }
}

/// Classical fixed-step RK4 of `x' = field(t, x)`, keeping every
/// `record_stride`-th sample. Outputs are left empty and inputs at zero.
pub fn integrate_rk4<F>(mut field: F, x0: &[f64], cfg: &SimConfig) -> Result<Trajectory, SimError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = x0.len();
    let h = cfg.step;
    let mut traj = Trajectory {
        state_names: (1..=n).map(|i| format!("s{i}")).collect(),
        output_names: Vec::new(),
        times: Vec::new(),
        states: Vec::new(),
        outputs: Vec::new(),
        inputs: Vec::new(),
        disturbances: Vec::new(),
    };
    let record = |traj: &mut Trajectory, t: f64, x: &[f64]| {
        traj.times.push(t);
        traj.states.push(x.to_vec());
        traj.outputs.push(Vec::new());
        traj.inputs.push(0.0);
        traj.disturbances.push(0.0);
    };
    let diverged = |x: &[f64]| x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT);

    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    record(&mut traj, 0.0, &x);
    if diverged(&x) {
        return Err(SimError::Diverged { time: 0.0, partial: Box::new(traj) });
    }
    for step in 0..cfg.steps() {
        let t = step as f64 * h;
        field(t, &x, &mut k1);
        axpy(&mut tmp, &x, 0.5 * h, &k1);
        field(t + 0.5 * h, &tmp, &mut k2);
        axpy(&mut tmp, &x, 0.5 * h, &k2);
        field(t + 0.5 * h, &tmp, &mut k3);
        axpy(&mut tmp, &x, h, &k3);
        field(t + h, &tmp, &mut k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t_next = (step + 1) as f64 * h;
        if diverged(&x) {
            record(&mut traj, t_next, &x);
            return Err(SimError::Diverged { time: t_next, partial: Box::new(traj) });
        }
        if (step + 1) % cfg.record_stride == 0 {
            record(&mut traj, t_next, &x);
        }
    }
    Ok(traj)
}

/// Polynomial compiled to flat `(coefficient, exponents)` pairs for fast
/// repeated evaluation.
struct CompiledPoly(Vec<(f64, Vec<u32>)>);

impl CompiledPoly {
    fn new(p: &Polynomial) -> Self {
        CompiledPoly(p.terms().map(|(m, c)| (c, m.exponents().to_vec())).collect())
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .map(|(c, e)| e.iter().zip(x).fold(*c, |acc, (&k, &xi)| acc * xi.powi(k as i32)))
            .sum()
    }
}

fn dot_row(m: &Matrix, row: usize, x: &[f64]) -> f64 {
    (0..m.ncols()).map(|j| m[(row, j)] * x[j]).sum()
}

fn mat_vec_into(m: &Matrix, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot_row(m, i, x);
    }
}

fn check_len(what: &str, found: usize, expected: usize) -> Result<(), SimError> {
    if found != expected {
        return Err(SimError::DimensionMismatch(format!("{what} has length {found}, expected {expected}")));
    }
    Ok(())
}

fn check_controller(ctrl: &Controller, exo: &ExosystemSpec, l: usize) -> Result<(), SimError> {
    let nu = ctrl.order();
    let r = exo.dim();
    if ctrl.g.shape() != (nu, l) || ctrl.h.shape() != (1, nu) || ctrl.gamma.shape() != (1, l) {
        return Err(SimError::DimensionMismatch("controller matrices do not match the plant".into()));
    }
    if exo.e.shape() != (1, r) {
        return Err(SimError::DimensionMismatch("E does not match S".into()));
    }
    Ok(())
}

/// Maps a partially recorded trajectory through `finish` on divergence.
fn finish_run<F>(run: Result<Trajectory, SimError>, mut finish: F) -> Result<Trajectory, SimError>
where
    F: FnMut(Trajectory) -> Trajectory,
{
    match run {
        Ok(traj) => Ok(finish(traj)),
        Err(SimError::Diverged { time, partial }) => Err(SimError::Diverged { time, partial: Box::new(finish(*partial)) }),
        Err(err) => Err(err),
    }
}

fn controller_names(nu: usize, r: usize) -> Vec<String> {
    (1..=nu).map(|i| format!("xi{i}")).chain((1..=r).map(|i| format!("w{i}"))).collect()
}

fn stack(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Plant `x' = f(x) + g(x)(u + v)` with `y = h(x)`, controller and exosystem,
/// integrated jointly over the state `[x; xi; w]`.
pub fn simulate_nonlinear_cl(
    spec: &PolySystemSpec,
    ctrl: &Controller,
    x0: &[f64],
    xi0: &[f64],
    w0: &[f64],
    cfg: &SimConfig,
    disturbed: bool,
) -> Result<Trajectory, SimError> {
    let n = spec.nstates();
    let l = spec.noutputs();
    let nu = ctrl.order();
    let exo = &spec.exosystem;
    let r = exo.dim();
    check_controller(ctrl, exo, l)?;
    check_len("x0", x0.len(), n)?;
    check_len("xi0", xi0.len(), nu)?;
    check_len("w0", w0.len(), r)?;
    let f: Vec<CompiledPoly> = spec.f.iter().map(CompiledPoly::new).collect();
    let g: Vec<CompiledPoly> = spec.g.iter().map(CompiledPoly::new).collect();
    let h: Vec<CompiledPoly> = spec.h.iter().map(CompiledPoly::new).collect();
    let gain = if disturbed { 1.0 } else { 0.0 };

    let signals = |s: &[f64], y: &mut [f64]| -> (f64, f64) {
        let (x, rest) = s.split_at(n);
        let (xi, w) = rest.split_at(nu);
        for (yp, hp) in y.iter_mut().zip(&h) {
            *yp = hp.eval(x);
        }
        let u = dot_row(&ctrl.h, 0, xi) + dot_row(&ctrl.gamma, 0, y);
        let v = gain * dot_row(&exo.e, 0, w);
        (u, v)
    };
    let mut y = vec![0.0; l];
    let field = |_t: f64, s: &[f64], ds: &mut [f64]| {
        let (u, v) = signals(s, &mut y);
        let (x, rest) = s.split_at(n);
        let (xi, w) = rest.split_at(nu);
        let (dx, drest) = ds.split_at_mut(n);
        let (dxi, dw) = drest.split_at_mut(nu);
        for j in 0..n {
            dx[j] = f[j].eval(x) + g[j].eval(x) * (u + v);
        }
        mat_vec_into(&ctrl.f, xi, dxi);
        for (i, d) in dxi.iter_mut().enumerate() {
            *d += dot_row(&ctrl.g, i, &y);
        }
        mat_vec_into(&exo.s, w, dw);
    };
    let run = integrate_rk4(field, &stack(&[x0, xi0, w0]), cfg);
    let names: Vec<String> = spec.state_names.iter().cloned().chain(controller_names(nu, r)).collect();
    finish_run(run, |mut traj| {
        fill_signals(&mut traj, l, |s, y| signals(s, y));
        traj.with_names(names.clone(), output_names(l))
    })
}

fn output_names(l: usize) -> Vec<String> {
    if l == 1 {
        vec!["y".to_string()]
    } else {
        (1..=l).map(|i| format!("y{i}")).collect()
    }
}

fn fill_signals<F>(traj: &mut Trajectory, l: usize, mut signals: F)
where
    F: FnMut(&[f64], &mut [f64]) -> (f64, f64),
{
    for k in 0..traj.len() {
        let mut y = vec![0.0; l];
        let (u, v) = signals(&traj.states[k], &mut y);
        traj.outputs[k] = y;
        traj.inputs[k] = u;
        traj.disturbances[k] = v;
    }
}

/// Lift `z' = A z + B (u + v) + N z (u + v)` with `y = C z` under the same
/// controller and exosystem, over the state `[z; xi; w]`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_bilinear_cl(
    lift: &BilinearLift,
    exo: &ExosystemSpec,
    ctrl: &Controller,
    z0: &[f64],
    xi0: &[f64],
    w0: &[f64],
    cfg: &SimConfig,
    disturbed: bool,
) -> Result<Trajectory, SimError> {
    let m = lift.dim();
    let l = lift.noutputs();
    let nu = ctrl.order();
    let r = exo.dim();
    check_controller(ctrl, exo, l)?;
    check_len("z0", z0.len(), m)?;
    check_len("xi0", xi0.len(), nu)?;
    check_len("w0", w0.len(), r)?;
    let gain = if disturbed { 1.0 } else { 0.0 };
    let signals = |s: &[f64], y: &mut [f64]| -> (f64, f64) {
        let (z, rest) = s.split_at(m);
        let (xi, w) = rest.split_at(nu);
        mat_vec_into(&lift.c, z, y);
        let u = dot_row(&ctrl.h, 0, xi) + dot_row(&ctrl.gamma, 0, y);
        let v = gain * dot_row(&exo.e, 0, w);
        (u, v)
    };
    let mut y = vec![0.0; l];
    let mut nz = vec![0.0; m];
    let field = |_t: f64, s: &[f64], ds: &mut [f64]| {
        let (u, v) = signals(s, &mut y);
        let (z, rest) = s.split_at(m);
        let (xi, w) = rest.split_at(nu);
        let (dz, drest) = ds.split_at_mut(m);
        let (dxi, dw) = drest.split_at_mut(nu);
        mat_vec_into(&lift.a, z, dz);
        mat_vec_into(&lift.n, z, &mut nz);
        for i in 0..m {
            dz[i] += (lift.b[(i, 0)] + nz[i]) * (u + v);
        }
        mat_vec_into(&ctrl.f, xi, dxi);
        for (i, d) in dxi.iter_mut().enumerate() {
            *d += dot_row(&ctrl.g, i, &y);
        }
        mat_vec_into(&exo.s, w, dw);
    };
    let run = integrate_rk4(field, &stack(&[z0, xi0, w0]), cfg);
    let names: Vec<String> = (1..=m).map(|i| format!("z{i}")).chain(controller_names(nu, r)).collect();
    finish_run(run, |mut traj| {
        fill_signals(&mut traj, l, |s, y| signals(s, y));
        traj.with_names(names.clone(), output_names(l))
    })
}

/// Error dynamics `p' = Ac p + Ntilde p (Htilde p)`. The recorded input is
/// `u + v = Htilde p`; no outputs are recorded and `v` is zero.
pub fn simulate_error_dynamics(cl: &ClosedLoop, p0: &[f64], cfg: &SimConfig) -> Result<Trajectory, SimError> {
    let k = cl.ac.nrows();
    check_len("p0", p0.len(), k)?;
    if cl.h_tilde.nrows() != 1 {
        return Err(SimError::DimensionMismatch("Htilde must be a single row".into()));
    }
    let mut np = vec![0.0; k];
    let field = |_t: f64, p: &[f64], dp: &mut [f64]| {
        let hp = dot_row(&cl.h_tilde, 0, p);
        mat_vec_into(&cl.ac, p, dp);
        mat_vec_into(&cl.n_tilde, p, &mut np);
        for i in 0..k {
            dp[i] += np[i] * hp;
        }
    };
    let run = integrate_rk4(field, p0, cfg);
    let names: Vec<String> = (1..=k).map(|i| format!("p{i}")).collect();
    finish_run(run, |mut traj| {
        for i in 0..traj.len() {
            traj.inputs[i] = dot_row(&cl.h_tilde, 0, &traj.states[i]);
        }
        traj.with_names(names.clone(), Vec::new())
    })
}

/// `V(p) = p^T W^-1 p` at every sample.
pub fn lyapunov_trace(traj: &Trajectory, w: &Matrix) -> Result<Vec<f64>, SimError> {
    let k = w.nrows();
    let chol = ((w + w.transpose()) * 0.5).cholesky().ok_or(SimError::NotPositiveDefinite)?;
    traj.states
        .iter()
        .map(|p| {
            check_len("state", p.len(), k)?;
            let p = DVector::from_column_slice(p);
            Ok(p.dot(&chol.solve(&p)))
        })
        .collect()
}

/// Largest `||z(t) - Psi(x(t))||_inf` over the common samples. The leading
/// `n` state components of `nonlinear` are `x` and the leading `M` of
/// `bilinear` are `z`.
pub fn compare_lift_trajectories(
    nonlinear: &Trajectory,
    bilinear: &Trajectory,
    dict: &Dictionary,
) -> Result<f64, SimError> {
    if nonlinear.times != bilinear.times {
        return Err(SimError::GridMismatch);
    }
    let n = dict.nvars();
    let m = dict.len();
    let mut worst: f64 = 0.0;
    for (xs, zs) in nonlinear.states.iter().zip(&bilinear.states) {
        if xs.len() < n || zs.len() < m {
            return Err(SimError::DimensionMismatch("trajectory state is shorter than the lift".into()));
        }
        let psi = embed(&xs[..n], dict)?;
        for i in 0..m {
            worst = worst.max((zs[i] - psi[i]).abs());
        }
    }
    Ok(worst)
}
