//! Parameterized families of linear time-varying systems
//! `dX/dt = A(t,s) X + B(t,s) u(t)`, their transition matrices and simulation.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlSignal;
use crate::error::{EnsembleError, Result};
use crate::grid::Grid;

pub type CoefFn = Arc<dyn Fn(f64, f64) -> DMatrix<C64> + Send + Sync>;

/// Refinement stops with an error once a single interval needs more substeps than this.
pub const MAX_SUBSTEPS: usize = 1 << 16;

/// The family `(A(t,s), B(t,s))` over `[0,T] × [s1,s2]`.
#[derive(Clone)]
pub struct SystemSpec {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub t_final: f64,
    pub s_span: (f64, f64),
    a: CoefFn,
    b: CoefFn,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("t_final", &self.t_final)
            .field("s_span", &self.s_span)
            .finish()
    }
}

impl SystemSpec {
    /// Validates dimensions and samples the coefficients on a 7×7 lattice of
    /// the rectangle to check they are finite.
    pub fn new(
        name: impl Into<String>,
        n: usize,
        m: usize,
        a: CoefFn,
        b: CoefFn,
        t_final: f64,
        s_span: (f64, f64),
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(EnsembleError::param("state and input dimensions must be positive"));
        }
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(EnsembleError::param(format!("horizon must be positive, got {t_final}")));
        }
        if !(s_span.0 < s_span.1) {
            return Err(EnsembleError::param(format!(
                "parameter span must satisfy s1 < s2, got [{}, {}]",
                s_span.0, s_span.1
            )));
        }
        let spec = SystemSpec { name: name.into(), n, m, t_final, s_span, a, b };
        for it in 0..7 {
            for is in 0..7 {
                let t = t_final * it as f64 / 6.0;
                let s = s_span.0 + (s_span.1 - s_span.0) * is as f64 / 6.0;
                spec.eval_a(t, s)?;
                spec.eval_b(t, s)?;
            }
        }
        Ok(spec)
    }

    pub fn a(&self, t: f64, s: f64) -> DMatrix<C64> {
        (self.a)(t, s)
    }

    pub fn b(&self, t: f64, s: f64) -> DMatrix<C64> {
        (self.b)(t, s)
    }

    pub(crate) fn eval_a(&self, t: f64, s: f64) -> Result<DMatrix<C64>> {
        let a = self.a(t, s);
        if a.shape() != (self.n, self.n) {
            return Err(EnsembleError::shape(format!(
                "A({t}, {s}) is {:?}, expected {n}x{n}",
                a.shape(),
                n = self.n
            )));
        }
        check_finite(&a, t, s, "A")?;
        Ok(a)
    }

    pub(crate) fn eval_b(&self, t: f64, s: f64) -> Result<DMatrix<C64>> {
        let b = self.b(t, s);
        if b.shape() != (self.n, self.m) {
            return Err(EnsembleError::shape(format!(
                "B({t}, {s}) is {:?}, expected {}x{}",
                b.shape(),
                self.n,
                self.m
            )));
        }
        check_finite(&b, t, s, "B")?;
        Ok(b)
    }

    /// Kalman rank test of `(A(t,s), B(t,s))` frozen at `t`.
    pub fn kalman_controllable(&self, t: f64, s: f64) -> Result<bool> {
        let a = self.eval_a(t, s)?;
        let b = self.eval_b(t, s)?;
        let n = self.n;
        let mut ctrb = DMatrix::<C64>::zeros(n, n * self.m);
        let mut blk = b.clone();
        for k in 0..n {
            ctrb.view_mut((0, k * self.m), (n, self.m)).copy_from(&blk);
            blk = &a * blk;
        }
        let sv = ctrb.singular_values();
        let tol = sv.max().max(1.0) * 1e-10;
        Ok(sv.iter().filter(|x| **x > tol).count() == n)
    }
}

fn check_finite(m: &DMatrix<C64>, t: f64, s: f64, which: &str) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(EnsembleError::Integration { t, s, reason: format!("{which} has non-finite entries") })
    }
}

/// Built-in families, selectable by name from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `d/dt (x,y) = ω [[0,-1],[1,0]] (x,y) + (u,v)`, `ω ∈ [omega1, omega2]`.
    /// With `complex_form` the scalar `dp/dt = iωp + α` is used instead (n = m = 1).
    Harmonic {
        omega1: f64,
        omega2: f64,
        t_final: f64,
        #[serde(default)]
        complex_form: bool,
    },
    /// `dx/dt = [[0,-1],[1,0]] x + s (1,0)ᵀ u`, `s ∈ [s1, s2]`.
    Example1 {
        t_final: f64,
        #[serde(default = "one")]
        s1: f64,
        #[serde(default = "two")]
        s2: f64,
    },
    /// `dx/dt = s·diag(rates) x + 1 u`, scalar input.
    Diagonal { rates: Vec<f64>, t_final: f64, s1: f64, s2: f64 },
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}

impl Family {
    pub fn build(&self) -> Result<SystemSpec> {
        let i = C64::new(0.0, 1.0);
        match self.clone() {
            Family::Harmonic { omega1, omega2, t_final, complex_form } => {
                if complex_form {
                    SystemSpec::new(
                        "harmonic_complex",
                        1,
                        1,
                        Arc::new(move |_, w| DMatrix::from_element(1, 1, i * w)),
                        Arc::new(|_, _| DMatrix::from_element(1, 1, C64::new(1.0, 0.0))),
                        t_final,
                        (omega1, omega2),
                    )
                } else {
                    SystemSpec::new(
                        "harmonic",
                        2,
                        2,
                        Arc::new(|_, w| rotation_generator(w)),
                        Arc::new(|_, _| DMatrix::identity(2, 2)),
                        t_final,
                        (omega1, omega2),
                    )
                }
            }
            Family::Example1 { t_final, s1, s2 } => SystemSpec::new(
                "example1",
                2,
                1,
                Arc::new(|_, _| rotation_generator(1.0)),
                Arc::new(|_, s| DMatrix::from_column_slice(2, 1, &[C64::new(s, 0.0), C64::new(0.0, 0.0)])),
                t_final,
                (s1, s2),
            ),
            Family::Diagonal { rates, t_final, s1, s2 } => {
                if rates.is_empty() {
                    return Err(EnsembleError::param("diagonal family needs at least one rate"));
                }
                let n = rates.len();
                SystemSpec::new(
                    "diagonal",
                    n,
                    1,
                    Arc::new(move |_, s| {
                        DMatrix::from_diagonal(&DVector::from_iterator(
                            n,
                            rates.iter().map(|r| C64::new(s * r, 0.0)),
                        ))
                    }),
                    Arc::new(move |_, _| DMatrix::from_element(n, 1, C64::new(1.0, 0.0))),
                    t_final,
                    (s1, s2),
                )
            }
        }
    }
}

/// `w · [[0,-1],[1,0]]`.
pub fn rotation_generator(w: f64) -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(-w, 0.0), C64::new(w, 0.0), C64::new(0.0, 0.0)])
}

/// `Φ(t_i, 0; s_j)` and `Φ(0, t_i; s_j)`, indexed `[j][i]`.
#[derive(Debug, Clone)]
pub struct TransitionTensor {
    pub time_nodes: Vec<f64>,
    pub param_nodes: Vec<f64>,
    pub values: Vec<Vec<DMatrix<C64>>>,
    pub inverse_values: Vec<Vec<DMatrix<C64>>>,
    /// `∫ Φ(0,t;s_j) B(t,s_j) φ_i(t) dt` with `φ_i` the hat function on
    /// node `i`, so a piecewise-linear control maps to `Σ_i G_i u_i` exactly.
    pub hat_moments: Vec<Vec<DMatrix<C64>>>,
    /// Substeps per grid interval that met the tolerance, per parameter node.
    pub substeps: Vec<usize>,
}

impl TransitionTensor {
    pub fn at_final(&self, j: usize) -> &DMatrix<C64> {
        self.values[j].last().unwrap()
    }

    pub fn inverse_at_final(&self, j: usize) -> &DMatrix<C64> {
        self.inverse_values[j].last().unwrap()
    }
}

/// States `X(t_i, s_j)` indexed `[j][i]`.
#[derive(Debug, Clone)]
pub struct EnsembleTrajectory {
    pub time_nodes: Vec<f64>,
    pub param_nodes: Vec<f64>,
    pub states: Vec<Vec<DVector<C64>>>,
}

impl EnsembleTrajectory {
    pub fn final_states(&self) -> Vec<DVector<C64>> {
        self.states.iter().map(|s| s.last().unwrap().clone()).collect()
    }
}

/// Classical RK4 over the grid intervals with `k` equal substeps each.
/// `rhs(interval, theta, t, y)` gets the interval index and the fractional
/// position inside it so piecewise-linear inputs need no search.
fn rk4_pass<F>(nodes: &[f64], y0: &DMatrix<C64>, k: usize, s: f64, rhs: &F) -> Result<Vec<DMatrix<C64>>>
where
    F: Fn(usize, f64, f64, &DMatrix<C64>) -> Result<DMatrix<C64>>,
{
    let mut out = Vec::with_capacity(nodes.len());
    let mut y = y0.clone();
    out.push(y.clone());
    for i in 0..nodes.len() - 1 {
        let (t0, t1) = (nodes[i], nodes[i + 1]);
        let dt = t1 - t0;
        let h = dt / k as f64;
        for step in 0..k {
            let th0 = step as f64 / k as f64;
            let thm = (step as f64 + 0.5) / k as f64;
            let th1 = (step + 1) as f64 / k as f64;
            let t = t0 + th0 * dt;
            let tm = t0 + thm * dt;
            let te = t0 + th1 * dt;
            let k1 = rhs(i, th0, t, &y)?;
            let k2 = rhs(i, thm, tm, &(&y + &k1 * C64::new(0.5 * h, 0.0)))?;
            let k3 = rhs(i, thm, tm, &(&y + &k2 * C64::new(0.5 * h, 0.0)))?;
            let k4 = rhs(i, th1, te, &(&y + &k3 * C64::new(h, 0.0)))?;
            y += (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * C64::new(h / 6.0, 0.0);
            if y.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(EnsembleError::Integration { t: te, s, reason: "state blew up".into() });
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Runs RK4 passes with 1, 2, 4, ... substeps per interval until the final
/// values of two successive passes differ by less than `step_tol`.
pub(crate) fn integrate_refined<F>(
    nodes: &[f64],
    y0: &DMatrix<C64>,
    step_tol: f64,
    s: f64,
    rhs: F,
) -> Result<(Vec<DMatrix<C64>>, usize)>
where
    F: Fn(usize, f64, f64, &DMatrix<C64>) -> Result<DMatrix<C64>>,
{
    if !(step_tol > 0.0) {
        return Err(EnsembleError::param("step_tol must be positive"));
    }
    let mut k = 1;
    let mut prev = rk4_pass(nodes, y0, k, s, &rhs)?;
    loop {
        k *= 2;
        if k > MAX_SUBSTEPS {
            return Err(EnsembleError::ToleranceNotMet(format!(
                "step halving did not reach {step_tol:e} at s = {s} within {MAX_SUBSTEPS} substeps per interval"
            )));
        }
        let next = rk4_pass(nodes, y0, k, s, &rhs)?;
        let d = max_abs_diff(prev.last().unwrap(), next.last().unwrap());
        if d < step_tol {
            return Ok((next, k));
        }
        prev = next;
    }
}

fn check_grid(spec: &SystemSpec, grid: &Grid) -> Result<()> {
    grid.validate()?;
    let tol = 1e-12 * spec.t_final.max(1.0);
    if grid.t_final() > spec.t_final + tol {
        return Err(EnsembleError::param(format!(
            "time grid ends at {} beyond the horizon {}",
            grid.t_final(),
            spec.t_final
        )));
    }
    let (s1, s2) = grid.s_span();
    let stol = 1e-12 * (spec.s_span.1 - spec.s_span.0).abs().max(1.0);
    if s1 < spec.s_span.0 - stol || s2 > spec.s_span.1 + stol {
        return Err(EnsembleError::param(format!(
            "parameter grid [{s1}, {s2}] leaves the family's span [{}, {}]",
            spec.s_span.0, spec.s_span.1
        )));
    }
    Ok(())
}

/// `Φ(t,0;s)` from `dΦ/dt = AΦ` and `Φ(0,t;s)` from the adjoint equation
/// `dΨ/dt = -ΨA`, both with `Φ(0,0) = Ψ(0) = I`, at every grid node.
///
/// The `Ψ` pass also carries `∫ΨB(1-θ)dt` and `∫ΨBθdt` (`θ` the position
/// inside each grid interval), from which the hat moments follow by
/// differencing.
pub fn transition_matrices(spec: &SystemSpec, grid: &Grid, step_tol: f64) -> Result<TransitionTensor> {
    check_grid(spec, grid)?;
    let nodes = &grid.time_nodes;
    let (n, m) = (spec.n, spec.m);
    let nt = nodes.len();
    let eye = DMatrix::<C64>::identity(n, n);
    let mut aug0 = DMatrix::<C64>::zeros(n, n + 2 * m);
    aug0.view_mut((0, 0), (n, n)).copy_from(&eye);
    type Node = (Vec<DMatrix<C64>>, Vec<DMatrix<C64>>, Vec<DMatrix<C64>>, usize);
    let per_node: Vec<Node> = grid
        .param_nodes
        .par_iter()
        .map(|&s| {
            let (fwd, k1) = integrate_refined(nodes, &eye, step_tol, s, |_, _, t, y| Ok(spec.eval_a(t, s)? * y))?;
            let (aug, k2) = integrate_refined(nodes, &aug0, step_tol, s, |_, th, t, y| {
                let psi = y.columns(0, n);
                let pb = psi * spec.eval_b(t, s)?;
                let mut d = DMatrix::<C64>::zeros(n, n + 2 * m);
                d.view_mut((0, 0), (n, n)).copy_from(&(-(psi * spec.eval_a(t, s)?)));
                d.view_mut((0, n), (n, m)).copy_from(&(&pb * C64::new(1.0 - th, 0.0)));
                d.view_mut((0, n + m), (n, m)).copy_from(&(&pb * C64::new(th, 0.0)));
                Ok(d)
            })?;
            let inv: Vec<DMatrix<C64>> = aug.iter().map(|y| y.columns(0, n).into_owned()).collect();
            let mut hats = vec![DMatrix::<C64>::zeros(n, m); nt];
            for i in 0..nt - 1 {
                let falling = aug[i + 1].columns(n, m) - aug[i].columns(n, m);
                let rising = aug[i + 1].columns(n + m, m) - aug[i].columns(n + m, m);
                hats[i] += falling;
                hats[i + 1] += rising;
            }
            Ok((fwd, inv, hats, k1.max(k2)))
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(per_node.len());
    let mut inverse_values = Vec::with_capacity(per_node.len());
    let mut hat_moments = Vec::with_capacity(per_node.len());
    let mut substeps = Vec::with_capacity(per_node.len());
    for (f, i, h, k) in per_node {
        values.push(f);
        inverse_values.push(i);
        hat_moments.push(h);
        substeps.push(k);
    }
    Ok(TransitionTensor {
        time_nodes: grid.time_nodes.clone(),
        param_nodes: grid.param_nodes.clone(),
        values,
        inverse_values,
        hat_moments,
        substeps,
    })
}

/// `Φ(t2, t1; s)` by integrating from `t1` to `t2`.
pub fn transition_between(spec: &SystemSpec, s: f64, t1: f64, t2: f64, step_tol: f64) -> Result<DMatrix<C64>> {
    let eye = DMatrix::<C64>::identity(spec.n, spec.n);
    if t1 == t2 {
        return Ok(eye);
    }
    let (vals, _) = integrate_refined(&[t1, t2], &eye, step_tol, s, |_, _, t, y| Ok(spec.eval_a(t, s)? * y))?;
    Ok(vals.last().unwrap().clone())
}

/// Integrates `dX/dt = AX + Bu` at every parameter node with `u` piecewise
/// linear between its samples.
pub fn simulate_ensemble(
    spec: &SystemSpec,
    grid: &Grid,
    x0: &[DVector<C64>],
    u: &ControlSignal,
    step_tol: f64,
) -> Result<EnsembleTrajectory> {
    check_grid(spec, grid)?;
    if u.m() != spec.m {
        return Err(EnsembleError::shape(format!("control has {} channels, system has m = {}", u.m(), spec.m)));
    }
    if u.times.len() != grid.n_time() || u.times.iter().zip(&grid.time_nodes).any(|(a, b)| a != b) {
        return Err(EnsembleError::shape("control must be sampled on the grid's time nodes"));
    }
    if x0.len() != grid.n_param() {
        return Err(EnsembleError::shape(format!(
            "initial profile has {} entries, grid has {} parameter nodes",
            x0.len(),
            grid.n_param()
        )));
    }
    if let Some(bad) = x0.iter().find(|x| x.len() != spec.n) {
        return Err(EnsembleError::shape(format!("initial state of length {}, expected {}", bad.len(), spec.n)));
    }
    let states: Vec<Vec<DVector<C64>>> = grid
        .param_nodes
        .par_iter()
        .zip(x0.par_iter())
        .map(|(&s, x)| {
            let y0 = DMatrix::from_column_slice(spec.n, 1, x.as_slice());
            let (traj, _) = integrate_refined(&grid.time_nodes, &y0, step_tol, s, |i, th, t, y| {
                let a = spec.eval_a(t, s)?;
                let b = spec.eval_b(t, s)?;
                let bu = b * u.lerp(i, th);
                Ok(a * y + DMatrix::from_column_slice(bu.len(), 1, bu.as_slice()))
            })?;
            let mut out: Vec<DVector<C64>> = traj.into_iter().map(|m| DVector::from_column_slice(m.as_slice())).collect();
            // first slice is the supplied profile, bit for bit
            out[0] = x.clone();
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(EnsembleTrajectory { time_nodes: grid.time_nodes.clone(), param_nodes: grid.param_nodes.clone(), states })
}

#[derive(Debug, Clone, Serialize)]
pub struct RepeatedPair {
    pub s_a: f64,
    pub s_b: f64,
    pub lambda_a: (f64, f64),
    pub lambda_b: (f64, f64),
    pub distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenvalueReport {
    pub t_fixed: f64,
    pub cluster_tol: f64,
    /// `(s, eigenvalues as (re, im))` per sample.
    pub eigenvalues: Vec<(f64, Vec<(f64, f64)>)>,
    pub repeats: Vec<RepeatedPair>,
    /// True when no two eigenvalues (within one matrix or across samples) are
    /// closer than `cluster_tol`.
    pub passes: bool,
}

/// Looks for repeated eigenvalues of `A(t_fixed, s)` over the samples, the
/// necessary condition for steering a finite ensemble of time-invariant systems.
pub fn repeated_eigenvalue_check(
    spec: &SystemSpec,
    param_samples: &[f64],
    t_fixed: f64,
    cluster_tol: f64,
) -> Result<EigenvalueReport> {
    let mut all: Vec<(f64, Vec<C64>)> = Vec::with_capacity(param_samples.len());
    for &s in param_samples {
        let a = spec.eval_a(t_fixed, s)?;
        let ev = eigenvalues(&a).ok_or_else(|| EnsembleError::numerical(format!("eigenvalue solver failed at s = {s}")))?;
        all.push((s, ev));
    }
    let flat: Vec<(usize, f64, C64)> =
        all.iter().enumerate().flat_map(|(k, (s, ev))| ev.iter().map(move |l| (k, *s, *l))).collect();
    let mut repeats = Vec::new();
    for a in 0..flat.len() {
        for b in a + 1..flat.len() {
            let d = (flat[a].2 - flat[b].2).norm();
            if d < cluster_tol {
                repeats.push(RepeatedPair {
                    s_a: flat[a].1,
                    s_b: flat[b].1,
                    lambda_a: (flat[a].2.re, flat[a].2.im),
                    lambda_b: (flat[b].2.re, flat[b].2.im),
                    distance: d,
                });
            }
        }
    }
    Ok(EigenvalueReport {
        t_fixed,
        cluster_tol,
        eigenvalues: all.into_iter().map(|(s, ev)| (s, ev.iter().map(|z| (z.re, z.im)).collect())).collect(),
        passes: repeats.is_empty(),
        repeats,
    })
}

fn eigenvalues(a: &DMatrix<C64>) -> Option<Vec<C64>> {
    if a.nrows() == 1 {
        return Some(vec![a[(0, 0)]]);
    }
    let schur = nalgebra::Schur::try_new(a.clone(), 1e-15, 10_000)?;
    schur.eigenvalues().map(|v| v.iter().copied().collect())
}
