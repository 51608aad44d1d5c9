use std::f64::consts::PI;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use ensemble_core::oscillator::{harmonic_basis, simulate_scalar, synthesize_alpha_with_basis, AlphaSynthesis};
use ensemble_core::qp::{build_qp, certify_positive_definite, evaluate_final_distance, solve_box_qp, QpSolution};
use ensemble_core::quadrature::linspace;
use ensemble_core::spheroidal::eigen_residuals;
use ensemble_core::{
    assemble, dpss, picard_diagnostic, simulate_ensemble, singular_system, synthesize_min_norm, target_offset,
    transition_matrices, ComplexProfile, ControlSignal, DVector, Grid, HarmonicSpec, PicardThresholds, SingularSystem,
    SystemSpec, TargetOffset, TransitionTensor, C64,
};
use serde::Serialize;

use crate::config::RunSpec;
use crate::output::{csv, Output};
use crate::{Cli, Command, Failure, Figure};

/// Frequencies whose trajectories `demo fig2` and `demo fig3` record.
const TRAJECTORY_OMEGAS: [f64; 3] = [-10.0, 0.0, 5.0];
const DEMO_STEP_TOL: f64 = 1e-10;
const DEMO_REL_EPS: f64 = 1e-8;

/// Runs one command, writes its manifest and returns the manifest path.
/// Outputs are written even when a tolerance is missed; the run then ends
/// with exit code 4.
pub fn run(cli: &Cli) -> Result<PathBuf, Failure> {
    let mut out = Output::create(&cli.out)?;
    let missed = match &cli.command {
        Command::Synth { spec } => synth(&mut out, &RunSpec::load(spec)?)?,
        Command::Simulate { spec, control } => simulate(&mut out, &RunSpec::load(spec)?, control)?,
        Command::Dpss { n, w, k } => dpss_cmd(&mut out, *n, *w, *k)?,
        Command::Qp { t, n, beta, bound, tol, n_omega } => qp_cmd(&mut out, *t, *n, *beta, *bound, *tol, *n_omega, "")?,
        Command::Demo { figure } => demo(&mut out, *figure)?,
        Command::Diagnose { spec } => diagnose(&mut out, &RunSpec::load(spec)?)?,
    };
    let config = serde_json::to_value(&cli.command).map_err(|e| Failure::numerical(e.to_string()))?;
    let manifest = out.finish(command_name(&cli.command), &config)?;
    match missed {
        Some(msg) => Err(Failure { code: 4, message: msg }),
        None => Ok(manifest),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth { .. } => "synth",
        Command::Simulate { .. } => "simulate",
        Command::Dpss { .. } => "dpss",
        Command::Qp { .. } => "qp",
        Command::Demo { .. } => "demo",
        Command::Diagnose { .. } => "diagnose",
    }
}

struct Prepared {
    sys: SystemSpec,
    grid: Grid,
    x0: Vec<DVector<C64>>,
    xf: Vec<DVector<C64>>,
}

fn prepare(spec: &RunSpec) -> Result<Prepared, Failure> {
    let sys = spec.system.build().map_err(Failure::core("building the system"))?;
    if spec.x0.len() != sys.n || spec.xf.len() != sys.n {
        return Err(Failure::config(format!("x0 and xf need {} entries for this system", sys.n)));
    }
    let grid = Grid::uniform(sys.t_final, spec.n_time, sys.s_span, spec.n_param).map_err(Failure::core("grid"))?;
    let x0 = vec![RunSpec::state(&spec.x0); spec.n_param];
    let xf = vec![RunSpec::state(&spec.xf); spec.n_param];
    Ok(Prepared { sys, grid, x0, xf })
}

fn singular(spec: &RunSpec, p: &Prepared) -> Result<(TransitionTensor, SingularSystem, TargetOffset), Failure> {
    let tt = transition_matrices(&p.sys, &p.grid, spec.step_tol).map_err(Failure::core("transition matrices"))?;
    let op = assemble(&p.sys, &p.grid, &tt).map_err(Failure::core("operator assembly"))?;
    let sing = singular_system(&op, spec.rank_tol).map_err(Failure::core("singular system"))?;
    let xi = target_offset(&tt, &p.x0, &p.xf).map_err(Failure::core("target offset"))?;
    Ok((tt, sing, xi))
}

fn state_rows(params: &[f64], states: &[DVector<C64>], targets: &[DVector<C64>]) -> Vec<Vec<f64>> {
    params
        .iter()
        .zip(states.iter().zip(targets))
        .map(|(s, (x, xf))| {
            let mut row = vec![*s];
            for z in x.iter() {
                row.push(z.re);
                row.push(z.im);
            }
            row.push((x - xf).norm());
            row
        })
        .collect()
}

fn state_header(first: &str, n: usize) -> String {
    let mut h = String::from(first);
    for k in 0..n {
        h.push_str(&format!(",re_{k},im_{k}"));
    }
    h.push_str(",distance");
    h
}

fn weighted_error(grid: &Grid, states: &[DVector<C64>], targets: &[DVector<C64>]) -> f64 {
    states
        .iter()
        .zip(targets)
        .zip(&grid.param_weights)
        .map(|((x, t), w)| w * (x - t).norm_squared())
        .sum::<f64>()
        .sqrt()
}

#[derive(Serialize)]
struct SynthReport {
    n_used: usize,
    reached: bool,
    eps: f64,
    predicted_residual: f64,
    simulated_residual: f64,
    control_norm: f64,
    rank_cutoff: usize,
    sigmas: Vec<f64>,
    residual_history: Vec<f64>,
}

fn synth(out: &mut Output, spec: &RunSpec) -> Result<Option<String>, Failure> {
    let p = prepare(spec)?;
    let (_, sing, xi) = singular(spec, &p)?;
    let eps = spec.rel_eps * sing.param_norm(&xi.to_flat());
    let syn = synthesize_min_norm(&sing, &xi, eps).map_err(Failure::core("synthesis"))?;
    let traj = simulate_ensemble(&p.sys, &p.grid, &p.x0, &syn.control, spec.step_tol)
        .map_err(Failure::core("verification simulation"))?;
    let finals = traj.final_states();
    let mut buf = Vec::new();
    syn.control.write_csv(&mut buf).map_err(|e| Failure::config(e.to_string()))?;
    out.write("control.csv", &buf)?;
    out.write("final_states.csv", &csv(&state_header("s", p.sys.n), state_rows(&p.grid.param_nodes, &finals, &p.xf)))?;
    let summary = syn.summary();
    out.write_json(
        "synthesis.json",
        &SynthReport {
            n_used: syn.n_used,
            reached: syn.reached,
            eps,
            predicted_residual: syn.achieved_residual,
            simulated_residual: weighted_error(&p.grid, &finals, &p.xf),
            control_norm: summary.control_norm,
            rank_cutoff: sing.rank_cutoff,
            sigmas: sing.sigmas.clone(),
            residual_history: summary.residual_history,
        },
    )?;
    Ok((!syn.reached).then(|| {
        format!("residual {:.3e} above eps {eps:.3e} with all {} retained modes", syn.achieved_residual, sing.rank_cutoff)
    }))
}

fn simulate(out: &mut Output, spec: &RunSpec, control: &PathBuf) -> Result<Option<String>, Failure> {
    let p = prepare(spec)?;
    let file =
        File::open(control).map_err(|e| Failure::config(format!("cannot open control {}: {e}", control.display())))?;
    let u = ControlSignal::read_csv(BufReader::new(file)).map_err(Failure::core("reading control"))?;
    let traj = simulate_ensemble(&p.sys, &p.grid, &p.x0, &u, spec.step_tol).map_err(Failure::core("simulation"))?;
    let finals = traj.final_states();
    out.write("final_states.csv", &csv(&state_header("s", p.sys.n), state_rows(&p.grid.param_nodes, &finals, &p.xf)))?;
    Ok(None)
}

fn diagnose(out: &mut Output, spec: &RunSpec) -> Result<Option<String>, Failure> {
    let p = prepare(spec)?;
    let (_, sing, xi) = singular(spec, &p)?;
    let report = picard_diagnostic(&sing, &xi, PicardThresholds::default()).map_err(Failure::core("picard diagnostic"))?;
    out.write_json("picard.json", &report)?;
    Ok(None)
}

#[derive(Serialize)]
struct DpssReport {
    n: usize,
    w: f64,
    count: usize,
    truncated: bool,
    strictly_ordered: bool,
    max_eigen_residual: f64,
    trace: f64,
    expected_trace: f64,
}

fn dpss_cmd(out: &mut Output, n: usize, w: f64, k: Option<usize>) -> Result<Option<String>, Failure> {
    let b = dpss(n, w, k).map_err(Failure::core("dpss"))?;
    let res = eigen_residuals(&b).map_err(Failure::core("dpss residuals"))?;
    let mut header = String::from("t");
    for j in 0..b.len() {
        header.push_str(&format!(",v_{j}"));
    }
    out.write("sequences.csv", &csv(&header, (0..n).map(|t| {
        let mut row = vec![t as f64];
        row.extend(b.sequences.iter().map(|v| v[t]));
        row
    })))?;
    let lambdas = b.lambdas();
    out.write(
        "eigenvalues.csv",
        &csv("k,kappa,lambda", b.kappas.iter().zip(&lambdas).enumerate().map(|(j, (k, l))| vec![j as f64, *k, *l])),
    )?;
    out.write_json(
        "dpss.json",
        &DpssReport {
            n,
            w,
            count: b.len(),
            truncated: b.truncated,
            strictly_ordered: b.kappas.windows(2).all(|p| p[0] > p[1])
                && b.kappas.iter().all(|k| *k > 0.0 && *k < 1.0),
            max_eigen_residual: res.iter().copied().fold(0.0, f64::max),
            trace: b.kappas.iter().sum(),
            expected_trace: 2.0 * w * n as f64,
        },
    )?;
    Ok(None)
}

#[derive(Serialize)]
struct QpReport<'a> {
    t_final: f64,
    n: usize,
    beta: f64,
    bound: f64,
    pd_certified: bool,
    pd_precision_bits: usize,
    max_distance: f64,
    saturated_fraction: f64,
    solution: &'a QpSolution,
}

#[allow(clippy::too_many_arguments)]
fn qp_cmd(
    out: &mut Output,
    t: f64,
    n: usize,
    beta: f64,
    bound: f64,
    tol: f64,
    n_omega: usize,
    suffix: &str,
) -> Result<Option<String>, Failure> {
    if n_omega < 2 {
        return Err(Failure::config("--n-omega must be at least 2"));
    }
    let prob = build_qp(t, n, beta, bound).map_err(Failure::core("building the QP"))?;
    let cert = certify_positive_definite(t, n, beta).map_err(Failure::core("positive-definiteness certificate"))?;
    let sol = solve_box_qp(&prob, tol).map_err(Failure::core("QP solve"))?;
    let omega = linspace(-beta, beta, n_omega);
    let dist = evaluate_final_distance(&prob, &sol.x_vector(), &omega, DEMO_STEP_TOL)
        .map_err(Failure::core("distance simulation"))?;
    out.write(&format!("solution{suffix}.csv"), &csv("t,u", prob.times.iter().zip(&sol.x).map(|(t, x)| vec![*t, *x])))?;
    out.write(&format!("distance{suffix}.csv"), &csv("omega,distance", omega.iter().zip(&dist).map(|(w, d)| vec![*w, *d])))?;
    out.write_json(
        &format!("qp{suffix}.json"),
        &QpReport {
            t_final: t,
            n,
            beta,
            bound,
            pd_certified: cert.certified,
            pd_precision_bits: cert.precision_bits,
            max_distance: dist.iter().copied().fold(0.0, f64::max),
            saturated_fraction: sol.saturated_fraction(bound, 1e-3),
            solution: &sol,
        },
    )?;
    Ok(None)
}

fn fig_case(p0: C64) -> Result<(HarmonicSpec, ComplexProfile, ComplexProfile, AlphaSynthesis), Failure> {
    let mut spec = HarmonicSpec::new(-10.0, 10.0, 1.0, 1001, 1001, 0.0).map_err(Failure::core("harmonic spec"))?;
    let basis = harmonic_basis(&spec).map_err(Failure::core("spheroidal basis"))?;
    let p0 = ComplexProfile::constant(p0, spec.n_freq);
    let pf = ComplexProfile::constant(C64::new(0.0, 0.0), spec.n_freq);
    let xi = ensemble_core::oscillator::target_offset(&spec, &p0, &pf).map_err(Failure::core("target offset"))?;
    spec.eps = DEMO_REL_EPS * basis.norm(&xi);
    let syn = synthesize_alpha_with_basis(&spec, &basis, &p0, &pf).map_err(Failure::core("alpha synthesis"))?;
    Ok((spec, p0, pf, syn))
}

#[derive(Serialize)]
struct FigReport {
    p0: (f64, f64),
    eps: f64,
    max_simulated_distance: f64,
    #[serde(flatten)]
    synthesis: ensemble_core::oscillator::AlphaSummary,
}

fn harmonic_demo(out: &mut Output, p0: C64) -> Result<Option<String>, Failure> {
    let (spec, p0p, pf, syn) = fig_case(p0)?;
    let check = ensemble_core::verify_by_simulation(&spec, &syn.alpha, &p0p, &pf, DEMO_STEP_TOL)
        .map_err(Failure::core("verification simulation"))?;
    let a = &syn.alpha.channels[0];
    out.write(
        "control.csv",
        &csv("t,re,im,abs", syn.alpha.times.iter().zip(a).map(|(t, z)| vec![*t, z.re, z.im, z.norm()])),
    )?;
    out.write(
        "final_states.csv",
        &csv(
            "omega,re,im,distance",
            check.freq_nodes.iter().zip(&check.final_states).zip(&check.deviation).map(|((w, z), d)| vec![*w, z.0, z.1, *d]),
        ),
    )?;
    let trajs: Vec<Vec<C64>> = TRAJECTORY_OMEGAS
        .iter()
        .map(|w| simulate_scalar(*w, &syn.alpha, p0, DEMO_STEP_TOL))
        .collect::<Result<_, _>>()
        .map_err(Failure::core("trajectory simulation"))?;
    let mut header = String::from("t");
    for w in TRAJECTORY_OMEGAS {
        header.push_str(&format!(",re_w{w},im_w{w}"));
    }
    out.write(
        "trajectories.csv",
        &csv(&header, syn.alpha.times.iter().enumerate().map(|(i, t)| {
            let mut row = vec![*t];
            for tr in &trajs {
                row.push(tr[i].re);
                row.push(tr[i].im);
            }
            row
        })),
    )?;
    out.write_json(
        "summary.json",
        &FigReport { p0: (p0.re, p0.im), eps: spec.eps, max_simulated_distance: check.max_deviation, synthesis: syn.summary() },
    )?;
    Ok((!syn.reached).then(|| format!("residual {:.3e} above eps {:.3e}", syn.residual, spec.eps)))
}

#[derive(Serialize)]
struct AmplitudeReport {
    alpha_at_zero_case1: f64,
    alpha_at_zero_case2: f64,
}

fn amplitude_demo(out: &mut Output) -> Result<Option<String>, Failure> {
    let (_, _, _, a) = fig_case(C64::new(1.0, 0.0))?;
    let (_, _, _, b) = fig_case(C64::new(1.0, 2.0))?;
    out.write(
        "amplitude.csv",
        &csv(
            "t,abs_case1,abs_case2",
            a.alpha.times.iter().enumerate().map(|(i, t)| vec![*t, a.alpha.channels[0][i].norm(), b.alpha.channels[0][i].norm()]),
        ),
    )?;
    out.write_json(
        "summary.json",
        &AmplitudeReport { alpha_at_zero_case1: a.alpha_at_zero().norm(), alpha_at_zero_case2: b.alpha_at_zero().norm() },
    )?;
    Ok(None)
}

fn demo(out: &mut Output, figure: Figure) -> Result<Option<String>, Failure> {
    match figure {
        Figure::Fig2 => harmonic_demo(out, C64::new(1.0, 0.0)),
        Figure::Fig3 => harmonic_demo(out, C64::new(1.0, 2.0)),
        Figure::Fig4 => amplitude_demo(out),
        Figure::Fig5 => {
            for (t, label) in [(1.0, "1"), (PI, "pi"), (5.0 * PI, "5pi"), (10.0 * PI, "10pi")] {
                qp_cmd(out, t, 51, 1.0, 1.0, 1e-10, 51, &format!("_T{label}"))?;
            }
            Ok(None)
        }
    }
}
