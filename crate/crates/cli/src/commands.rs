use std::path::Path;

use koopreg::lift::{build_lift, check_closure, embed, BilinearLift, ClosureReport};
use koopreg::lmi::{self, LmiError, LmiProblem, SolverOptions};
use koopreg::numerics::{self, Matrix, RANK_TOL};
use koopreg::polyspec::PolySystemSpec;
use koopreg::regulator::{
    assemble_closed_loop, error_state, signed_grid, synth_full, verify_regulator_equations, Controller,
    SynthError, SynthOptions, DEFAULT_EPSILONS, DEFAULT_GAMMA_MAGNITUDES, DEFAULT_G_GAINS, SYNTH_MARGIN,
};
use koopreg::sim::{self, SimConfig, SimError, Trajectory};
use nalgebra::DVector;
use serde_json::{json, Value};

use crate::io::{self, BasinRecord, CertificateFile, ControllerFile};
use crate::report::RunReport;
use crate::svg::{self, Panel, Series};
use crate::{CommonArgs, InitialArgs, Model, Scenario, SimArgs, SimulateArgs, SynthArgs, VerifyArgs};
use crate::CliError;

const RESIDUAL_TOL: f64 = 1e-12;

fn closure_details(report: &ClosureReport) -> Value {
    let witnesses: Vec<Value> = report
        .witnesses
        .iter()
        .map(|w| {
            json!({
                "property": w.property,
                "subject": w.subject.to_string(),
                "residual": w.residual,
                "remainder": w.remainder.to_string(),
            })
        })
        .collect();
    json!({
        "property_ok": report.property_ok,
        "residuals": report.residuals,
        "witnesses": witnesses,
        "notes": report.notes,
    })
}

fn print_closure(report: &ClosureReport) {
    for (k, (ok, res)) in report.property_ok.iter().zip(report.residuals).enumerate() {
        println!("  property {}: {} (worst residual {res:e})", k + 1, if *ok { "ok" } else { "violated" });
    }
    for w in &report.witnesses {
        println!("  property {} fails at {}: remainder {}", w.property, w.subject, w.remainder);
    }
}

fn pbh_details(lift: &BilinearLift) -> Result<(bool, bool), CliError> {
    let stab = numerics::pbh_stabilizable(&lift.a, &lift.b, RANK_TOL).map_err(|e| CliError::Input(e.to_string()))?;
    let det = numerics::pbh_detectable(&lift.a, &lift.c, RANK_TOL).map_err(|e| CliError::Input(e.to_string()))?;
    Ok((stab, det))
}

/// Parses the spec and runs the closure stage; returns the lift when closed.
fn closure_stage(report: &mut RunReport, spec: &PolySystemSpec) -> Result<Option<BilinearLift>, CliError> {
    let closure = check_closure(spec).map_err(|e| CliError::Input(e.to_string()))?;
    report.stage("closure", closure.passed(), closure_details(&closure));
    print_closure(&closure);
    if !closure.passed() {
        return Ok(None);
    }
    build_lift(spec).map(Some).map_err(|e| CliError::Input(e.to_string()))
}

fn parse_stage(report: &mut RunReport, path: &Path) -> Result<PolySystemSpec, CliError> {
    let spec = io::read_spec(path)?;
    report.stage(
        "parse",
        true,
        json!({
            "states": spec.state_names,
            "outputs": spec.noutputs(),
            "exosystem_dim": spec.exosystem.dim(),
            "observables": spec.dictionary.len(),
        }),
    );
    Ok(spec)
}

pub fn check(args: &CommonArgs) -> Result<i32, CliError> {
    let mut report = RunReport::new("check", json!({ "spec": args.spec.display().to_string() }), args.timings);
    let spec = parse_stage(&mut report, &args.spec)?;
    if let Some(lift) = closure_stage(&mut report, &spec)? {
        let (stab, det) = pbh_details(&lift)?;
        report.stage("pbh", stab && det, json!({ "stabilizable": stab, "detectable": det }));
    }
    let code = if report.all_passed() { 0 } else { 1 };
    report.finish(&args.out_dir, code)
}

pub fn lift(args: &CommonArgs) -> Result<i32, CliError> {
    let mut report = RunReport::new("lift", json!({ "spec": args.spec.display().to_string() }), args.timings);
    let spec = parse_stage(&mut report, &args.spec)?;
    let Some(lift) = closure_stage(&mut report, &spec)? else {
        return report.finish(&args.out_dir, 1);
    };
    report.stage(
        "lift",
        true,
        json!({
            "dimension": lift.dim(),
            "A": io::rows(&lift.a),
            "B": io::rows(&lift.b),
            "N": io::rows(&lift.n),
            "C": io::rows(&lift.c),
            "observables": lift.dictionary.observables().iter().map(|p| p.to_expr(&spec.state_names)).collect::<Vec<_>>(),
        }),
    );
    let csv = io::matrix_blocks(&[("A", &lift.a), ("B", &lift.b), ("N", &lift.n), ("C", &lift.c)]);
    report.write_artifact(&io::artifact(&args.out_dir, "lift.csv"), &csv)?;
    report.finish(&args.out_dir, 0)
}

struct Initial {
    x0: Vec<f64>,
    xi0: Vec<f64>,
    w0: Vec<f64>,
}

fn initial(args: &InitialArgs, n: usize, nu: usize, r: usize) -> Result<Initial, CliError> {
    let pick = |name: &str, v: &Option<Vec<f64>>, len: usize| -> Result<Vec<f64>, CliError> {
        match v {
            None => Ok(vec![1.0; len]),
            Some(v) if v.len() == len => Ok(v.clone()),
            Some(v) => Err(CliError::Input(format!("--{name} has {} entries, expected {len}", v.len()))),
        }
    };
    Ok(Initial { x0: pick("x0", &args.x0, n)?, xi0: pick("xi0", &args.xi0, nu)?, w0: pick("w0", &args.w0, r)? })
}

fn initial_json(init: &Initial) -> Value {
    json!({ "x0": init.x0, "xi0": init.xi0, "w0": init.w0 })
}

fn lmi_attempt_details(outcome: &Result<lmi::LmiCertificate, LmiError>) -> Value {
    match outcome {
        Ok(c) => json!({
            "feasible": true,
            "epsilon": c.epsilon,
            "lambda_min_W": c.lambda_min_w,
            "lambda_max_block": c.lambda_max_block,
        }),
        Err(LmiError::AllInfeasible(reports)) => json!({
            "feasible": false,
            "grid": reports.iter().map(|r| json!({
                "epsilon": r.epsilon,
                "best_objective": r.best_objective,
                "best_lambda_max_block": r.best_lambda_max_block,
                "iterations": r.iterations,
                "warnings": r.warnings,
            })).collect::<Vec<_>>(),
        }),
        Err(err) => json!({ "feasible": false, "error": err.to_string() }),
    }
}

pub fn synth(args: &SynthArgs) -> Result<i32, CliError> {
    let common = &args.common;
    let gamma_grid = args.gamma_grid.clone().unwrap_or_else(|| signed_grid(&DEFAULT_GAMMA_MAGNITUDES));
    let g_gain_grid = args.g_gain_grid.clone().unwrap_or_else(|| DEFAULT_G_GAINS.to_vec());
    let eps_grid = args.eps_grid.clone().unwrap_or_else(|| DEFAULT_EPSILONS.to_vec());
    if gamma_grid.is_empty() || g_gain_grid.is_empty() || eps_grid.is_empty() {
        return Err(CliError::Input("gain and epsilon grids must be non-empty".into()));
    }
    if let Some(bad) = eps_grid.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(CliError::Input(format!("epsilon {bad} is not positive")));
    }
    let spec = io::read_spec(&common.spec)?;
    let r = spec.exosystem.dim();
    let init = initial(&args.initial, spec.nstates(), r, r)?;
    let mut report = RunReport::new(
        "synth",
        json!({
            "spec": common.spec.display().to_string(),
            "gamma_grid": gamma_grid,
            "g_gain_grid": g_gain_grid,
            "eps_grid": eps_grid,
            "margin": args.margin,
            "max_iterations": args.max_iterations,
            "delta_W": lmi::DELTA_W,
            "delta_M": lmi::DELTA_M,
            "initial": initial_json(&init),
        }),
        common.timings,
    );
    report.stage("parse", true, json!({ "states": spec.state_names, "observables": spec.dictionary.len() }));

    // p(0) needs the dictionary, which synth_full validates; a malformed
    // dictionary simply leaves the basin target unset here.
    let basin_target = koopreg::lift::Dictionary::new(spec.dictionary.clone(), spec.nstates())
        .ok()
        .and_then(|d| embed(&init.x0, &d).ok())
        .map(|z0| {
            let xi_err: Vec<f64> = init.xi0.iter().zip(&init.w0).map(|(a, b)| a - b).collect();
            DVector::from_iterator(z0.len() + r, z0.iter().copied().chain(xi_err))
        });
    let options = SynthOptions {
        gamma_grid,
        g_gain_grid,
        eps_grid,
        margin: args.margin,
        solver: SolverOptions { max_iterations: args.max_iterations, ..Default::default() },
        basin_target,
    };
    let outcome = match synth_full(&spec, &options) {
        Ok(outcome) => outcome,
        Err(err) => {
            let details = match &err {
                SynthError::Closure(closure) => {
                    print_closure(closure);
                    closure_details(closure)
                }
                SynthError::Assumption { stabilizable, detectable } => {
                    json!({ "stabilizable": stabilizable, "detectable": detectable })
                }
                SynthError::Stabilization(candidates) => json!({
                    "candidates": candidates.iter().map(|c| json!({
                        "g_gain": c.g_gain, "gamma": c.gamma, "max_real_part": c.max_real_part,
                    })).collect::<Vec<_>>(),
                }),
                other => json!({ "error": other.to_string() }),
            };
            report.stage(err.stage(), false, details);
            eprintln!("synthesis stopped at stage {}: {err}", err.stage());
            return report.finish(&common.out_dir, 1);
        }
    };
    let d = &outcome.diagnostics;
    report.stage("closure", true, closure_details(&d.closure));
    report.stage("pbh", true, json!({ "stabilizable": d.stabilizable, "detectable": d.detectable }));
    let (im_a, im_b) = d.internal_model_residuals;
    report.stage(
        "internal_model",
        im_a == 0.0 && im_b == 0.0,
        json!({
            "F": io::rows(&outcome.internal_model.f),
            "Sigma": io::rows(&outcome.internal_model.sigma),
            "H": io::rows(&outcome.internal_model.h),
            "G": io::rows(&outcome.internal_model.g),
            "sigma_s_minus_f_sigma": im_a,
            "h_sigma_plus_e": im_b,
        }),
    );
    let reference = &d.reference_gain;
    report.stage(
        "stabilization",
        true,
        json!({
            "chosen_g_gain": d.chosen_g_gain,
            "chosen_gamma": d.chosen_gamma,
            "max_real_part": d.spectrum.max_real_part,
            "eigenvalues": d.spectrum.eigenvalues.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
            "reference_gain": {
                "gamma": reference.gamma,
                "trace_A": reference.trace_a,
                "CB": reference.cb,
                "trace_closed": reference.trace_closed,
                "max_real_part": reference.max_real_part,
                "hurwitz": reference.hurwitz,
            },
            "candidates": d.candidates.iter().map(|c| json!({
                "g_gain": c.g_gain,
                "gamma": c.gamma,
                "max_real_part": c.max_real_part,
                "hurwitz": c.hurwitz,
            })).collect::<Vec<_>>(),
        }),
    );
    println!(
        "  G = {} * (-E^T), Gamma = {}, max Re = {:e}",
        d.chosen_g_gain, d.chosen_gamma, d.spectrum.max_real_part
    );
    report.stage(
        "regulator_equations",
        d.regulator.max() <= RESIDUAL_TOL && d.sylvester_deviation <= 1e-10,
        json!({
            "plant": d.regulator.plant,
            "output": d.regulator.output,
            "internal_model": d.regulator.internal_model,
            "feedforward": d.regulator.feedforward,
            "sylvester_deviation": d.sylvester_deviation,
        }),
    );
    report.stage(
        "lmi",
        outcome.certificate.is_some(),
        json!({
            "attempts": d.lmi_attempts.iter().map(|a| {
                let mut v = lmi_attempt_details(&a.outcome);
                v["basin_constrained"] = json!(a.basin_constrained);
                v
            }).collect::<Vec<_>>(),
        }),
    );
    if let Some(b) = &d.basin {
        report.stage("basin", b.inside, json!({ "p0": b.p0.as_slice(), "value": b.value, "inside": b.inside }));
    }
    for note in &d.notes {
        println!("  note: {note}");
    }

    let controller_file = ControllerFile::new(&outcome.controller, &outcome.internal_model.sigma);
    report.write_artifact(&io::artifact(&common.out_dir, "controller.json"), &io::to_json(&controller_file))?;
    if let Some(cert) = &outcome.certificate {
        let file = CertificateFile {
            w: io::rows(&cert.w),
            epsilon: cert.epsilon,
            lambda_min_w: cert.lambda_min_w,
            lambda_max_block: cert.lambda_max_block,
            delta_w: lmi::DELTA_W,
            delta_m: lmi::DELTA_M,
            basin: d.basin.as_ref().map(|b| BasinRecord { p0: b.p0.as_slice().to_vec(), value: b.value, inside: b.inside }),
        };
        report.write_artifact(&io::artifact(&common.out_dir, "certificate.json"), &io::to_json(&file))?;
    }
    let code = if outcome.conditions_hold() { 0 } else { 1 };
    report.finish(&common.out_dir, code)
}

fn sim_config(args: &SimArgs) -> Result<SimConfig, CliError> {
    SimConfig::new(args.step, args.horizon, args.stride).map_err(|e| CliError::Input(e.to_string()))
}

fn load_controller(path: &Path, spec: &PolySystemSpec) -> Result<(Controller, Matrix), CliError> {
    let (ctrl, sigma) = io::read_json::<ControllerFile>(path)?.controller()?;
    let nu = ctrl.f.nrows();
    let (l, r) = (spec.noutputs(), spec.exosystem.dim());
    if ctrl.f.ncols() != nu
        || ctrl.g.shape() != (nu, l)
        || ctrl.h.shape() != (1, nu)
        || ctrl.gamma.shape() != (1, l)
        || sigma.shape() != (nu, r)
    {
        return Err(CliError::Input(format!("{}: controller dimensions do not match the spec", path.display())));
    }
    Ok((ctrl, sigma))
}

fn lift_or_fail(spec: &PolySystemSpec) -> Result<BilinearLift, CliError> {
    build_lift(spec).map_err(|e| CliError::Input(format!("cannot lift the spec: {e}")))
}

fn panels<'a>(traj: &'a Trajectory, plant_states: usize, columns: &'a [Vec<f64>], disturbed: bool) -> Vec<Panel<'a>> {
    let mut out = Vec::new();
    if plant_states > 0 {
        out.push(Panel {
            ylabel: "state".into(),
            series: (0..plant_states)
                .map(|i| Series { label: traj.state_names[i].clone(), values: &columns[i] })
                .collect(),
        });
    }
    for (p, name) in traj.output_names.iter().enumerate() {
        out.push(Panel {
            ylabel: name.clone(),
            series: vec![Series { label: name.clone(), values: &columns[traj.state_names.len() + p] }],
        });
    }
    let base = traj.state_names.len() + traj.output_names.len();
    out.push(Panel { ylabel: "u".into(), series: vec![Series { label: "u".into(), values: &columns[base] }] });
    if disturbed {
        out.push(Panel { ylabel: "v".into(), series: vec![Series { label: "v".into(), values: &columns[base + 1] }] });
    }
    out
}

/// Column-major copy of a trajectory: states, outputs, u, v.
fn columns(traj: &Trajectory) -> Vec<Vec<f64>> {
    let ns = traj.state_names.len();
    let nl = traj.output_names.len();
    let mut cols = vec![Vec::with_capacity(traj.len()); ns + nl + 2];
    for k in 0..traj.len() {
        for (i, v) in traj.states[k].iter().chain(&traj.outputs[k]).enumerate() {
            cols[i].push(*v);
        }
        cols[ns + nl].push(traj.inputs[k]);
        cols[ns + nl + 1].push(traj.disturbances[k]);
    }
    cols
}

pub fn simulate(args: &SimulateArgs) -> Result<i32, CliError> {
    let common = &args.common;
    let spec = io::read_spec(&common.spec)?;
    let (ctrl, sigma) = load_controller(&args.controller, &spec)?;
    let cfg = sim_config(&args.sim)?;
    let init = initial(&args.initial, spec.nstates(), ctrl.order(), spec.exosystem.dim())?;
    let scenario = match args.scenario {
        Scenario::Undisturbed => "undisturbed",
        Scenario::Disturbed => "disturbed",
        Scenario::Error => "error",
    };
    let model = match (args.scenario, args.model) {
        (Scenario::Error, _) => "error",
        (_, Model::Bilinear) => "bilinear",
        (_, Model::Nonlinear) => "nonlinear",
    };
    let name = if model == "error" { "error_dynamics".to_string() } else { format!("{model}_{scenario}") };
    let mut report = RunReport::new(
        "simulate",
        json!({
            "spec": common.spec.display().to_string(),
            "controller": args.controller.display().to_string(),
            "certificate": args.certificate.as_ref().map(|p| p.display().to_string()),
            "scenario": scenario,
            "model": model,
            "step": cfg.step,
            "horizon": cfg.horizon,
            "stride": cfg.record_stride,
            "initial": initial_json(&init),
        }),
        common.timings,
    )
    .with_file_stem(&format!("simulate_{name}"));
    let lift = lift_or_fail(&spec)?;
    let cl = assemble_closed_loop(&lift, &ctrl, &sigma).map_err(|e| CliError::Input(e.to_string()))?;
    let radius = numerics::eigenvalues(&cl.ac).map_err(|e| CliError::Input(e.to_string()))?.spectral_radius();
    let warning = cfg.stiffness_warning(radius);
    if let Some(w) = &warning {
        eprintln!("warning: {w}");
    }
    let disturbed = args.scenario == Scenario::Disturbed;
    let z0 = embed(&init.x0, &lift.dictionary).map_err(|e| CliError::Input(e.to_string()))?;
    let p0 = error_state(
        &cl,
        &z0,
        &DVector::from_column_slice(&init.xi0),
        &DVector::from_column_slice(&init.w0),
    );
    let (run, plant_states) = match model {
        "nonlinear" => (
            sim::simulate_nonlinear_cl(&spec, &ctrl, &init.x0, &init.xi0, &init.w0, &cfg, disturbed),
            spec.nstates(),
        ),
        "bilinear" => (
            sim::simulate_bilinear_cl(&lift, &spec.exosystem, &ctrl, z0.as_slice(), &init.xi0, &init.w0, &cfg, disturbed),
            0,
        ),
        _ => (sim::simulate_error_dynamics(&cl, p0.as_slice(), &cfg), cl.ac.nrows()),
    };
    let (traj, diverged) = match run {
        Ok(traj) => (traj, None),
        Err(SimError::Diverged { time, partial }) => (*partial, Some(time)),
        Err(err) => return Err(CliError::Input(err.to_string())),
    };

    let last = traj.len() - 1;
    let plant_max = traj
        .states
        .iter()
        .flat_map(|s| s.iter().take(if model == "bilinear" { lift.dim() } else { spec.nstates().min(s.len()) }))
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut details = json!({
        "samples": traj.len(),
        "final_time": traj.times[last],
        "final_state": traj.states[last],
        "final_output": traj.outputs[last],
        "final_input": traj.inputs[last],
        "initial_output": traj.outputs[0],
        "max_abs_plant_state": plant_max,
        "diverged_at": diverged,
        "spectral_radius": radius,
        "stiffness_warning": warning,
    });
    let mut passed = diverged.is_none();
    if let (Some(path), "error") = (&args.certificate, model) {
        let cert = io::read_json::<CertificateFile>(path)?.certificate()?;
        let v = sim::lyapunov_trace(&traj, &cert.w).map_err(|e| CliError::Input(e.to_string()))?;
        let max_increase = v.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        details["lyapunov"] = json!({ "initial": v[0], "final": v[last], "max_increase": max_increase });
        passed &= max_increase <= 1e-6;
    }
    report.stage("simulation", passed, details);

    let csv_path = io::artifact(&common.out_dir, &format!("{name}.csv"));
    report.write_artifact(&csv_path, &traj.to_csv())?;
    let cols = columns(&traj);
    let title = match model {
        "error" => "Error dynamics p(t)".to_string(),
        _ => format!("{} closed loop, {scenario}", if model == "bilinear" { "Bilinear" } else { "Nonlinear" }),
    };
    let plot = svg::render(&title, &traj.times, &panels(&traj, plant_states, &cols, disturbed));
    report.write_artifact(&io::artifact(&common.out_dir, &format!("{name}.svg")), &plot)?;
    if let Some(t) = diverged {
        eprintln!("simulation diverged at t = {t}; partial trajectory kept");
    }
    report.finish(&common.out_dir, if passed { 0 } else { 1 })
}

pub fn verify(args: &VerifyArgs) -> Result<i32, CliError> {
    let common = &args.common;
    let spec = io::read_spec(&common.spec)?;
    let (ctrl, sigma) = load_controller(&args.controller, &spec)?;
    let cert_file: CertificateFile = io::read_json(&args.certificate)?;
    let cert = cert_file.certificate()?;
    let cfg = sim_config(&args.sim)?;
    let init = initial(&args.initial, spec.nstates(), ctrl.order(), spec.exosystem.dim())?;
    let mut report = RunReport::new(
        "verify",
        json!({
            "spec": common.spec.display().to_string(),
            "controller": args.controller.display().to_string(),
            "certificate": args.certificate.display().to_string(),
            "require_basin": args.require_basin,
            "equivalence_tol": args.equivalence_tol,
            "step": cfg.step,
            "horizon": cfg.horizon,
            "stride": cfg.record_stride,
            "initial": initial_json(&init),
        }),
        common.timings,
    );
    let lift = lift_or_fail(&spec)?;
    let exo = &spec.exosystem;
    let cl = assemble_closed_loop(&lift, &ctrl, &sigma).map_err(|e| CliError::Input(e.to_string()))?;

    let res = verify_regulator_equations(&lift, exo, &ctrl, &sigma, &cl.pi).map_err(|e| CliError::Input(e.to_string()))?;
    report.stage(
        "regulator_equations",
        res.max() <= RESIDUAL_TOL,
        json!({
            "plant": res.plant,
            "output": res.output,
            "internal_model": res.internal_model,
            "feedforward": res.feedforward,
        }),
    );
    let im_a = numerics::max_abs(&(&sigma * &exo.s - &ctrl.f * &sigma));
    let im_b = numerics::max_abs(&(&ctrl.h * &sigma + &exo.e));
    report.stage(
        "internal_model",
        im_a <= RESIDUAL_TOL && im_b <= RESIDUAL_TOL,
        json!({ "sigma_s_minus_f_sigma": im_a, "h_sigma_plus_e": im_b }),
    );
    let spectrum = numerics::eigenvalues(&cl.ac).map_err(|e| CliError::Input(e.to_string()))?;
    report.stage(
        "closed_loop",
        spectrum.max_real_part < -SYNTH_MARGIN,
        json!({ "max_real_part": spectrum.max_real_part }),
    );

    let problem = LmiProblem::new(cl.ac.clone(), cl.n_tilde.clone(), cl.h_tilde.clone(), cert.epsilon)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let check = lmi::verify_certificate(&cert, &problem);
    report.stage(
        "certificate",
        check.valid,
        json!({
            "epsilon": cert.epsilon,
            "lambda_min_W": check.lambda_min_w,
            "lambda_max_block": check.lambda_max_block,
        }),
    );

    let z0 = embed(&init.x0, &lift.dictionary).map_err(|e| CliError::Input(e.to_string()))?;
    let p0 = error_state(&cl, &z0, &DVector::from_column_slice(&init.xi0), &DVector::from_column_slice(&init.w0));
    let basin = lmi::in_basin(&p0, &cert.w);
    let (inside, value) = basin.as_ref().map_or((false, f64::NAN), |b| *b);
    let recorded = cert_file.basin.as_ref().map(|b| b.inside);
    let basin_ok = basin.is_ok() && recorded.is_none_or(|r| r == inside) && (inside || !args.require_basin);
    report.stage(
        "basin",
        basin_ok,
        json!({ "p0": p0.as_slice(), "value": value, "inside": inside, "recorded_inside": recorded }),
    );
    if !inside {
        println!("  p(0) lies outside the certified basin (p0^T W^-1 p0 = {value:e})");
    }

    let sims = sim::simulate_nonlinear_cl(&spec, &ctrl, &init.x0, &init.xi0, &init.w0, &cfg, true).and_then(|nl| {
        let bl = sim::simulate_bilinear_cl(&lift, exo, &ctrl, z0.as_slice(), &init.xi0, &init.w0, &cfg, true)?;
        sim::compare_lift_trajectories(&nl, &bl, &lift.dictionary)
    });
    match sims {
        Ok(err) => report.stage(
            "lift_equivalence",
            err <= args.equivalence_tol,
            json!({ "max_error": err, "tolerance": args.equivalence_tol }),
        ),
        Err(err) => report.stage("lift_equivalence", false, json!({ "error": err.to_string() })),
    }
    let code = if report.all_passed() { 0 } else { 1 };
    report.finish(&common.out_dir, code)
}
