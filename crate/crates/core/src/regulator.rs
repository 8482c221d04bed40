//! Internal-model controller synthesis and the end-to-end regulation pipeline.
//!
//! The controller `xi' = F xi + G y`, `u = H xi + Gamma y` copies the
//! exosystem (`F = S`, `Sigma = I`, `H = -E`) so that the steady state needs
//! no plant deviation (`Pi = 0`). In error coordinates
//! `p = [z - Pi w; xi - Sigma w]` the closed loop becomes
//! `p' = Ac p + Ntilde p (Htilde p)`.

use nalgebra::DVector;
use thiserror::Error;

use crate::lift::{build_lift, check_closure, BilinearLift, ClosureReport, LiftError};
use crate::lmi::{self, LmiCertificate, LmiError, LmiProblem, SolverOptions};
use crate::numerics::{self, Matrix, NumericsError, Spectrum, RANK_TOL};
use crate::polyspec::PolySystemSpec;

/// Tolerance on `||S + S^T||_max` for a neutrally stable exosystem.
pub const NEUTRAL_TOL: f64 = 1e-12;
/// Hurwitz margin required of synthesized closed loops.
pub const SYNTH_MARGIN: f64 = 1e-6;

/// Gain magnitudes tried for `Gamma`, each with both signs.
pub const DEFAULT_GAMMA_MAGNITUDES: [f64; 8] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 500.0];
/// Multipliers `k` of the integral gain `G = k (-E^T)`.
pub const DEFAULT_G_GAINS: [f64; 8] = [1.0, -1.0, -2.0, -5.0, -10.0, -20.0, -50.0, -100.0];
pub const DEFAULT_EPSILONS: [f64; 1] = [0.01];

/// Real parts closer than this are considered equal when ranking designs.
const RANKING_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegulatorError {
    #[error("exosystem is not neutrally stable: ||S + S^T|| = {0:e}")]
    NotNeutrallyStable(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("synthesis supports a single measured output, found {0}")]
    UnsupportedOutputs(usize),
    #[error("no candidate gain makes Ac Hurwitz")]
    NoStabilizingGain(Vec<(f64, f64)>),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Exosystem `w' = S w`, `v = E w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExosystemSpec {
    pub s: Matrix,
    pub e: Matrix,
}

impl ExosystemSpec {
    pub fn dim(&self) -> usize {
        self.s.nrows()
    }
}

pub fn check_neutral_stability(s: &Matrix) -> Result<bool, NumericsError> {
    numerics::ensure_square(s)?;
    numerics::ensure_finite(s)?;
    Ok(numerics::max_abs(&(s + s.transpose())) <= NEUTRAL_TOL)
}

fn check_exosystem(exo: &ExosystemSpec) -> Result<usize, RegulatorError> {
    let r = numerics::ensure_square(&exo.s)?;
    if exo.e.shape() != (1, r) {
        return Err(RegulatorError::DimensionMismatch(format!(
            "E is {}x{}, expected 1x{r}",
            exo.e.nrows(),
            exo.e.ncols()
        )));
    }
    if !check_neutral_stability(&exo.s)? {
        return Err(RegulatorError::NotNeutrallyStable(numerics::max_abs(
            &(&exo.s + exo.s.transpose()),
        )));
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InternalModel {
    pub f: Matrix,
    pub sigma: Matrix,
    pub h: Matrix,
    pub g: Matrix,
}

impl InternalModel {
    /// Same model with `G` multiplied by `k`.
    pub fn with_g_gain(&self, k: f64) -> Self {
        InternalModel { g: &self.g * k, ..self.clone() }
    }
}

/// `F = S`, `Sigma = I`, `H = -E`, `G = -E^T`.
pub fn synth_internal_model(exo: &ExosystemSpec) -> Result<InternalModel, RegulatorError> {
    let r = check_exosystem(exo)?;
    Ok(InternalModel {
        f: exo.s.clone(),
        sigma: Matrix::identity(r, r),
        h: -&exo.e,
        g: -exo.e.transpose(),
    })
}

/// `xi' = F xi + G y`, `u = H xi + Gamma y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub f: Matrix,
    pub g: Matrix,
    pub h: Matrix,
    /// `1 x l` feedthrough gain.
    pub gamma: Matrix,
}

impl Controller {
    pub fn from_model(model: &InternalModel, gamma: f64) -> Self {
        Controller {
            f: model.f.clone(),
            g: model.g.clone(),
            h: model.h.clone(),
            gamma: Matrix::from_element(1, model.g.ncols(), gamma),
        }
    }

    /// Controller order.
    pub fn order(&self) -> usize {
        self.f.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub ac: Matrix,
    pub n_tilde: Matrix,
    pub h_tilde: Matrix,
    pub sigma: Matrix,
    pub pi: Matrix,
}

pub fn assemble_closed_loop(
    lift: &BilinearLift,
    ctrl: &Controller,
    sigma: &Matrix,
) -> Result<ClosedLoop, RegulatorError> {
    let m = lift.dim();
    let l = lift.noutputs();
    let nu = numerics::ensure_square(&ctrl.f)?;
    let checks = [
        ("G", ctrl.g.shape(), (nu, l)),
        ("H", ctrl.h.shape(), (1, nu)),
        ("Gamma", ctrl.gamma.shape(), (1, l)),
        ("B", lift.b.shape(), (m, 1)),
        ("N", lift.n.shape(), (m, m)),
        ("Sigma", (sigma.nrows(), 0), (nu, 0)),
    ];
    for (name, found, expected) in checks {
        if found != expected {
            return Err(RegulatorError::DimensionMismatch(format!(
                "{name} is {}x{}, expected {}x{}",
                found.0, found.1, expected.0, expected.1
            )));
        }
    }
    let gamma_c = &ctrl.gamma * &lift.c;
    let mut ac = Matrix::zeros(m + nu, m + nu);
    ac.view_mut((0, 0), (m, m)).copy_from(&(&lift.a + &lift.b * &gamma_c));
    ac.view_mut((0, m), (m, nu)).copy_from(&(&lift.b * &ctrl.h));
    ac.view_mut((m, 0), (nu, m)).copy_from(&(&ctrl.g * &lift.c));
    ac.view_mut((m, m), (nu, nu)).copy_from(&ctrl.f);
    let mut n_tilde = Matrix::zeros(m + nu, m + nu);
    n_tilde.view_mut((0, 0), (m, m)).copy_from(&lift.n);
    let mut h_tilde = Matrix::zeros(1, m + nu);
    h_tilde.view_mut((0, 0), (1, m)).copy_from(&gamma_c);
    h_tilde.view_mut((0, m), (1, nu)).copy_from(&ctrl.h);
    Ok(ClosedLoop {
        ac,
        n_tilde,
        h_tilde,
        sigma: sigma.clone(),
        pi: Matrix::zeros(m, sigma.ncols()),
    })
}

/// Returns the first candidate whose closed loop is Hurwitz with `margin`.
pub fn stabilize_gamma(
    lift: &BilinearLift,
    model: &InternalModel,
    candidates: &[f64],
    margin: f64,
) -> Result<(f64, Spectrum), RegulatorError> {
    let mut tried = Vec::with_capacity(candidates.len());
    for &gamma in candidates {
        let cl = assemble_closed_loop(lift, &Controller::from_model(model, gamma), &model.sigma)?;
        let spectrum = numerics::eigenvalues(&cl.ac)?;
        if spectrum.max_real_part < -margin {
            return Ok((gamma, spectrum));
        }
        tried.push((gamma, spectrum.max_real_part));
    }
    Err(RegulatorError::NoStabilizingGain(tried))
}

/// `Gamma` candidates ordered by magnitude, positive sign first.
pub fn signed_grid(magnitudes: &[f64]) -> Vec<f64> {
    magnitudes.iter().flat_map(|&m| [m, -m]).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainCandidate {
    pub g_gain: f64,
    pub gamma: f64,
    pub max_real_part: f64,
    pub hurwitz: bool,
    sorted_real_parts: Vec<f64>,
}

/// Lexicographic comparison of descending real parts: `true` when `a` is
/// strictly better (more stable) than `b`.
fn better_spectrum(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > RANKING_TOL {
            return x < y;
        }
    }
    false
}

/// Evaluates every `(k, Gamma)` pair with `G = k G0` and returns all
/// evaluations plus the index of the best Hurwitz design, if any.
pub fn gain_search(
    lift: &BilinearLift,
    model: &InternalModel,
    g_gains: &[f64],
    gammas: &[f64],
    margin: f64,
) -> Result<(Vec<GainCandidate>, Option<usize>), RegulatorError> {
    let mut candidates: Vec<GainCandidate> = Vec::with_capacity(g_gains.len() * gammas.len());
    let mut best: Option<usize> = None;
    for &g_gain in g_gains {
        let scaled = model.with_g_gain(g_gain);
        for &gamma in gammas {
            let cl = assemble_closed_loop(lift, &Controller::from_model(&scaled, gamma), &model.sigma)?;
            let spectrum = numerics::eigenvalues(&cl.ac)?;
            let cand = GainCandidate {
                g_gain,
                gamma,
                max_real_part: spectrum.max_real_part,
                hurwitz: spectrum.max_real_part < -margin,
                sorted_real_parts: spectrum.sorted_real_parts(),
            };
            if cand.hurwitz
                && best.is_none_or(|b| {
                    better_spectrum(&cand.sorted_real_parts, &candidates[b].sorted_real_parts)
                })
            {
                best = Some(candidates.len());
            }
            candidates.push(cand);
        }
    }
    Ok((candidates, best))
}

/// Max-norm residuals of the four regulator equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegulatorResiduals {
    /// `Pi S - (A + B Gamma C) Pi - (B + N Pi w)(H Sigma + E) - N Pi w Gamma C Pi`,
    /// with `w` ranging over the unit basis vectors.
    pub plant: f64,
    /// `C Pi`.
    pub output: f64,
    /// `Sigma S - F Sigma - G C Pi`.
    pub internal_model: f64,
    /// `R - H Sigma` with the disturbance-cancelling feedforward `R = -E`.
    pub feedforward: f64,
}

impl RegulatorResiduals {
    pub fn max(&self) -> f64 {
        self.plant.max(self.output).max(self.internal_model).max(self.feedforward)
    }
}

pub fn verify_regulator_equations(
    lift: &BilinearLift,
    exo: &ExosystemSpec,
    ctrl: &Controller,
    sigma: &Matrix,
    pi: &Matrix,
) -> Result<RegulatorResiduals, RegulatorError> {
    let r = exo.dim();
    let m = lift.dim();
    if pi.shape() != (m, r) || sigma.shape() != (ctrl.order(), r) {
        return Err(RegulatorError::DimensionMismatch(format!(
            "Pi is {}x{} and Sigma is {}x{}, expected {m}x{r} and {}x{r}",
            pi.nrows(),
            pi.ncols(),
            sigma.nrows(),
            sigma.ncols(),
            ctrl.order()
        )));
    }
    let hse = &ctrl.h * sigma + &exo.e;
    let gcp = &ctrl.gamma * &lift.c * pi;
    let linear = pi * &exo.s - (&lift.a + &lift.b * &ctrl.gamma * &lift.c) * pi - &lift.b * &hse;
    let mut plant: f64 = 0.0;
    for k in 0..r {
        let npw = &lift.n * pi.column(k);
        let res = &linear - &npw * &hse - &npw * &gcp;
        plant = plant.max(numerics::max_abs(&res));
    }
    if r == 0 {
        plant = numerics::max_abs(&linear);
    }
    let output = numerics::max_abs(&(&lift.c * pi));
    let internal_model = numerics::max_abs(&(sigma * &exo.s - &ctrl.f * sigma - &ctrl.g * &lift.c * pi));
    let feedforward = numerics::max_abs(&(-&exo.e - &ctrl.h * sigma));
    Ok(RegulatorResiduals { plant, output, internal_model, feedforward })
}

/// Solves the linear part of the regulator equations in compact Sylvester
/// form for the deviation `[Pi; Sigma' - Sigma]` from the designed solution
/// and returns it. For the internal-model design the right-hand side is zero
/// and the unique solution is zero whenever `Ac` is Hurwitz.
pub fn sylvester_deviation(
    lift: &BilinearLift,
    exo: &ExosystemSpec,
    ctrl: &Controller,
    cl: &ClosedLoop,
) -> Result<Matrix, RegulatorError> {
    let m = lift.dim();
    let nu = ctrl.order();
    let r = exo.dim();
    let mut rhs = Matrix::zeros(m + nu, r);
    rhs.view_mut((0, 0), (m, r)).copy_from(&(&lift.b * (&ctrl.h * &cl.sigma + &exo.e)));
    rhs.view_mut((m, 0), (nu, r)).copy_from(&(&ctrl.f * &cl.sigma - &cl.sigma * &exo.s));
    Ok(numerics::solve_sylvester(&exo.s, &cl.ac, &rhs)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub gamma_grid: Vec<f64>,
    pub g_gain_grid: Vec<f64>,
    pub eps_grid: Vec<f64>,
    pub margin: f64,
    pub solver: SolverOptions,
    /// Initial error state `p(0)` whose basin membership is checked.
    pub basin_target: Option<DVector<f64>>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            gamma_grid: signed_grid(&DEFAULT_GAMMA_MAGNITUDES),
            g_gain_grid: DEFAULT_G_GAINS.to_vec(),
            eps_grid: DEFAULT_EPSILONS.to_vec(),
            margin: SYNTH_MARGIN,
            solver: SolverOptions::default(),
            basin_target: None,
        }
    }
}

/// Behaviour of the plain design `G = -E^T`, `Gamma = gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceGainCheck {
    pub gamma: f64,
    pub trace_a: f64,
    pub cb: f64,
    /// `trace(A + B Gamma C)`.
    pub trace_closed: f64,
    pub max_real_part: f64,
    pub hurwitz: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiAttempt {
    pub basin_constrained: bool,
    pub outcome: Result<LmiCertificate, LmiError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasinCheck {
    pub p0: DVector<f64>,
    pub value: f64,
    pub inside: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub closure: ClosureReport,
    pub stabilizable: bool,
    pub detectable: bool,
    pub candidates: Vec<GainCandidate>,
    pub reference_gain: ReferenceGainCheck,
    pub chosen_g_gain: f64,
    pub chosen_gamma: f64,
    pub spectrum: Spectrum,
    /// `||Sigma S - F Sigma||` and `||H Sigma + E||`.
    pub internal_model_residuals: (f64, f64),
    pub regulator: RegulatorResiduals,
    pub sylvester_deviation: f64,
    pub lmi_attempts: Vec<LmiAttempt>,
    pub basin: Option<BasinCheck>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutcome {
    pub lift: BilinearLift,
    pub internal_model: InternalModel,
    pub controller: Controller,
    pub closed_loop: ClosedLoop,
    pub certificate: Option<LmiCertificate>,
    pub diagnostics: Diagnostics,
}

impl SynthOutcome {
    /// Internal-model identities hold exactly and a verified certificate exists.
    pub fn conditions_hold(&self) -> bool {
        let (a, b) = self.diagnostics.internal_model_residuals;
        a == 0.0 && b == 0.0 && self.certificate.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("exosystem: {0}")]
    Exosystem(RegulatorError),
    #[error("dictionary is not closed under the dynamics")]
    Closure(Box<ClosureReport>),
    #[error("lift: {0}")]
    Lift(LiftError),
    #[error("assumption check failed: stabilizable = {stabilizable}, detectable = {detectable}")]
    Assumption { stabilizable: bool, detectable: bool },
    #[error("no candidate design makes Ac Hurwitz")]
    Stabilization(Vec<GainCandidate>),
    #[error("regulator: {0}")]
    Regulator(RegulatorError),
}

impl SynthError {
    pub fn stage(&self) -> &'static str {
        match self {
            SynthError::Exosystem(_) => "exosystem",
            SynthError::Closure(_) | SynthError::Lift(_) => "closure",
            SynthError::Assumption { .. } => "pbh",
            SynthError::Stabilization(_) => "stabilization",
            SynthError::Regulator(_) => "regulator",
        }
    }
}

impl From<RegulatorError> for SynthError {
    fn from(err: RegulatorError) -> Self {
        SynthError::Regulator(err)
    }
}

impl From<NumericsError> for SynthError {
    fn from(err: NumericsError) -> Self {
        SynthError::Regulator(err.into())
    }
}

/// Reference feedthrough gain for the trace and spectrum check.
pub const REFERENCE_GAMMA: f64 = 500.0;

/// Closure check, lift, PBH, internal model, gain search, regulator
/// equations and LMI certification in one pass.
pub fn synth_full(spec: &PolySystemSpec, options: &SynthOptions) -> Result<SynthOutcome, SynthError> {
    let model = synth_internal_model(&spec.exosystem).map_err(SynthError::Exosystem)?;
    let closure = check_closure(spec).map_err(SynthError::Lift)?;
    if !closure.passed() {
        return Err(SynthError::Closure(Box::new(closure)));
    }
    let lift = build_lift(spec).map_err(SynthError::Lift)?;
    if lift.noutputs() != 1 {
        return Err(RegulatorError::UnsupportedOutputs(lift.noutputs()).into());
    }
    let stabilizable = numerics::pbh_stabilizable(&lift.a, &lift.b, RANK_TOL)?;
    let detectable = numerics::pbh_detectable(&lift.a, &lift.c, RANK_TOL)?;
    if !(stabilizable && detectable) {
        return Err(SynthError::Assumption { stabilizable, detectable });
    }

    let mut notes = Vec::new();
    let reference = {
        let cl = assemble_closed_loop(&lift, &Controller::from_model(&model, REFERENCE_GAMMA), &model.sigma)?;
        let m = lift.dim();
        let spectrum = numerics::eigenvalues(&cl.ac)?;
        ReferenceGainCheck {
            gamma: REFERENCE_GAMMA,
            trace_a: lift.a.trace(),
            cb: (&lift.c * &lift.b)[(0, 0)],
            trace_closed: cl.ac.view((0, 0), (m, m)).trace(),
            max_real_part: spectrum.max_real_part,
            hurwitz: spectrum.max_real_part < -options.margin,
        }
    };
    if !reference.hurwitz {
        notes.push(format!(
            "G = -E^T with Gamma = {} is not Hurwitz: trace(A + B Gamma C) = {}, max Re = {:e}",
            reference.gamma, reference.trace_closed, reference.max_real_part
        ));
    }

    let (candidates, best) =
        gain_search(&lift, &model, &options.g_gain_grid, &options.gamma_grid, options.margin)?;
    let reference_gain_works = candidates.iter().any(|c| c.g_gain == 1.0 && c.hurwitz);
    if options.g_gain_grid.contains(&1.0) && !reference_gain_works {
        notes.push("no Gamma on the grid stabilizes the loop with G = -E^T".to_string());
    }
    let Some(best) = best else {
        return Err(SynthError::Stabilization(candidates));
    };
    let chosen_g_gain = candidates[best].g_gain;
    let chosen_gamma = candidates[best].gamma;
    let internal_model = model.with_g_gain(chosen_g_gain);
    let controller = Controller::from_model(&internal_model, chosen_gamma);
    let closed_loop = assemble_closed_loop(&lift, &controller, &internal_model.sigma)?;
    let spectrum = numerics::eigenvalues(&closed_loop.ac)?;

    let exo = &spec.exosystem;
    let sigma = &internal_model.sigma;
    let internal_model_residuals = (
        numerics::max_abs(&(sigma * &exo.s - &internal_model.f * sigma)),
        numerics::max_abs(&(&internal_model.h * sigma + &exo.e)),
    );
    let regulator = verify_regulator_equations(&lift, exo, &controller, sigma, &closed_loop.pi)?;
    let sylvester_deviation = numerics::max_abs(&sylvester_deviation(&lift, exo, &controller, &closed_loop)?);

    let template = LmiProblem::new(
        closed_loop.ac.clone(),
        closed_loop.n_tilde.clone(),
        closed_loop.h_tilde.clone(),
        options.eps_grid.first().copied().unwrap_or(DEFAULT_EPSILONS[0]),
    )
    .map_err(|err| SynthError::Regulator(RegulatorError::DimensionMismatch(err.to_string())))?;
    let mut lmi_attempts = Vec::new();
    if let Some(p0) = &options.basin_target {
        let solver = SolverOptions { basin_target: Some(p0.clone()), ..options.solver.clone() };
        lmi_attempts.push(LmiAttempt {
            basin_constrained: true,
            outcome: lmi::epsilon_search(&template, &options.eps_grid, &solver),
        });
    }
    if lmi_attempts.iter().all(|a| a.outcome.is_err()) {
        let solver = SolverOptions { basin_target: None, ..options.solver.clone() };
        lmi_attempts.push(LmiAttempt {
            basin_constrained: false,
            outcome: lmi::epsilon_search(&template, &options.eps_grid, &solver),
        });
    }
    let certificate = lmi_attempts.iter().find_map(|a| a.outcome.as_ref().ok()).cloned();
    let basin = match (&options.basin_target, &certificate) {
        (Some(p0), Some(cert)) => {
            let (inside, value) = lmi::in_basin(p0, &cert.w)
                .map_err(|err| SynthError::Regulator(RegulatorError::DimensionMismatch(err.to_string())))?;
            if !inside {
                notes.push(format!("p(0) lies outside the certified basin: p0^T W^-1 p0 = {value:e}"));
            }
            Some(BasinCheck { p0: p0.clone(), value, inside })
        }
        _ => None,
    };

    Ok(SynthOutcome {
        diagnostics: Diagnostics {
            closure,
            stabilizable,
            detectable,
            candidates,
            reference_gain: reference,
            chosen_g_gain,
            chosen_gamma,
            spectrum,
            internal_model_residuals,
            regulator,
            sylvester_deviation,
            lmi_attempts,
            basin,
            notes,
        },
        lift,
        internal_model,
        controller,
        closed_loop,
        certificate,
    })
}

/// Error-coordinate initial state `[z0 - Pi w0; xi0 - Sigma w0]`.
pub fn error_state(cl: &ClosedLoop, z0: &DVector<f64>, xi0: &DVector<f64>, w0: &DVector<f64>) -> DVector<f64> {
    let z = z0 - &cl.pi * w0;
    let xi = xi0 - &cl.sigma * w0;
    let mut p = DVector::zeros(z.len() + xi.len());
    p.rows_mut(0, z.len()).copy_from(&z);
    p.rows_mut(z.len(), xi.len()).copy_from(&xi);
    p
}
