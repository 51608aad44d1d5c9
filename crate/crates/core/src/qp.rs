//! Amplitude-constrained steering of the harmonic ensemble as a
//! box-constrained convex QP over a time-sampled real control `u` (`v ≡ 0`).
//!
//! With `u = Σ x_i φ_i` piecewise linear on the sample times and
//! `g_i(ω) = ∫ e^{-iωτ} φ_i(τ) dτ`, the endpoint from `p(0) = 1` is
//! `p(T,ω) = e^{iωT}(1 + Σ x_i g_i(ω))`, so
//! `J = ∫_{-β}^{β} |p(T,ω)|² dω = 2(xᵀH_g x + 2xᵀQ_g) + 2β` exactly, with
//! `H_g = ½∫Re(g_i ḡ_j)dω` and `Q_g = ½∫Re g_i dω`. These are the double
//! integrals `∫∫ φ_i φ_j sin β(τ−σ)/(τ−σ)` and `∫ φ_i sin(βτ)/τ`, whose
//! point samples give the sinc matrix `H` and vector `Q`.

use astro_float::{BigFloat, Consts, RoundingMode};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::control::ControlSignal;
use crate::error::{EnsembleError, Result};
use crate::oscillator::simulate_scalar;
use crate::quadrature::{composite_gauss_legendre, hat_transforms, linspace};

/// Iteration budget for [`solve_box_qp`].
pub const MAX_QP_ITERATIONS: usize = 2_000_000;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub times: Vec<f64>,
    pub beta: f64,
    pub bound: f64,
    /// Uniform `Δt` between samples.
    pub quadrature_weight: f64,
    /// `sin(β(t_i−t_j))/(t_i−t_j)`, diagonal `β`.
    pub h: DMatrix<f64>,
    /// `sin(βt_i)/t_i`, `β` at `t = 0`.
    pub q: DVector<f64>,
    /// Matrix and vector actually minimized (`xᵀHx + 2xᵀQ`).
    pub objective_h: DMatrix<f64>,
    pub objective_q: DVector<f64>,
    /// True when the objective matrices are the exact piecewise-linear
    /// (Galerkin) ones, so `J = 2·objective + 2β`.
    pub galerkin: bool,
}

fn sinc_ratio(beta: f64, d: f64) -> f64 {
    if d == 0.0 {
        beta
    } else {
        (beta * d).sin() / d
    }
}

/// Uniform samples on `[0, T]` with the sinc matrices and the Galerkin
/// objective assembled from closed-form hat transforms and Gauss-Legendre in ω.
pub fn build_qp(t_final: f64, n: usize, beta: f64, bound: f64) -> Result<QpProblem> {
    if n < 2 {
        return Err(EnsembleError::param("need at least two control samples"));
    }
    if !(t_final > 0.0) || !(beta > 0.0) || !(bound > 0.0) {
        return Err(EnsembleError::param("T, beta and bound must be positive"));
    }
    let times = linspace(0.0, t_final, n);
    let h = DMatrix::from_fn(n, n, |i, j| sinc_ratio(beta, times[i] - times[j]));
    let q = DVector::from_fn(n, |i, _| sinc_ratio(beta, times[i]));

    // integrand oscillates like e^{iω(t_i−t_j)}: ~βT/π periods over the band
    let panels = ((2.0 * beta * t_final / std::f64::consts::PI).ceil() as usize + 4).max(20);
    let (ws, wq) = composite_gauss_legendre(-beta, beta, panels, 20);
    let g: Vec<Vec<C64>> = ws.par_iter().map(|w| hat_transforms(&times, *w)).collect();
    let mut hg = DMatrix::<f64>::zeros(n, n);
    let mut qg = DVector::<f64>::zeros(n);
    for (gk, wk) in g.iter().zip(&wq) {
        for i in 0..n {
            qg[i] += 0.5 * wk * gk[i].re;
            for j in 0..=i {
                hg[(i, j)] += 0.5 * wk * (gk[i] * gk[j].conj()).re;
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            hg[(j, i)] = hg[(i, j)];
        }
    }
    Ok(QpProblem {
        quadrature_weight: t_final / (n - 1) as f64,
        times,
        beta,
        bound,
        h,
        q,
        objective_h: hg,
        objective_q: qg,
        galerkin: true,
    })
}

impl QpProblem {
    /// A bare `min xᵀHx + 2xᵀQ, |x_i| ≤ bound` problem (the sinc fields are
    /// set to the same matrices).
    pub fn from_matrices(h: DMatrix<f64>, q: DVector<f64>, bound: f64) -> Result<Self> {
        let n = q.len();
        if h.shape() != (n, n) {
            return Err(EnsembleError::shape("H must be square and match Q"));
        }
        if !(bound > 0.0) {
            return Err(EnsembleError::param("bound must be positive"));
        }
        Ok(QpProblem {
            times: if n >= 2 { linspace(0.0, 1.0, n) } else { vec![0.0; n] },
            beta: 1.0,
            bound,
            quadrature_weight: 1.0,
            objective_h: h.clone(),
            objective_q: q.clone(),
            h,
            q,
            galerkin: false,
        })
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    /// `xᵀHx + 2xᵀQ` with the minimized matrices.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.objective_h * x)) + 2.0 * x.dot(&self.objective_q)
    }

    /// `xᵀHx + 2xᵀQ` with the sinc samples.
    pub fn sinc_objective(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.h * x)) + 2.0 * x.dot(&self.q)
    }

    /// `½∫ g_i ḡ_j dω`; its imaginary part is antisymmetric and vanishes on
    /// a symmetric band.
    pub fn complex_kernel(&self, omega_panels: usize) -> DMatrix<C64> {
        let n = self.n();
        let (ws, wq) = composite_gauss_legendre(-self.beta, self.beta, omega_panels, 20);
        let mut k = DMatrix::<C64>::zeros(n, n);
        for (w, wk) in ws.iter().zip(&wq) {
            let g = hat_transforms(&self.times, *w);
            for i in 0..n {
                for j in 0..n {
                    k[(i, j)] += g[i] * g[j].conj() * (0.5 * wk);
                }
            }
        }
        k
    }

    pub fn control(&self, x: &DVector<f64>) -> Result<ControlSignal> {
        ControlSignal::from_real(self.times.clone(), vec![x.iter().copied().collect()])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// `xᵀHx + 2xᵀQ` with the minimized matrices.
    pub objective: f64,
    /// The same form with the sinc samples.
    pub sinc_objective: f64,
    /// `J = 2·objective + 2β` for the Galerkin objective; `None` otherwise.
    pub continuous_cost: Option<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Objective after every accepted iterate.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

impl QpSolution {
    pub fn x_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x)
    }

    /// Fraction of samples within `tol` of `±bound`.
    pub fn saturated_fraction(&self, bound: f64, tol: f64) -> f64 {
        self.x.iter().filter(|x| (x.abs() - bound).abs() <= tol).count() as f64 / self.x.len() as f64
    }
}

fn power_iteration(h: &DMatrix<f64>) -> f64 {
    let n = h.nrows();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.01 * i as f64);
    v /= v.norm();
    let mut lam = 0.0;
    for _ in 0..10_000 {
        let w = h * &v;
        let nl = v.dot(&w);
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        v = w / nw;
        if (nl - lam).abs() <= 1e-15 * nl.abs() {
            lam = nl;
            break;
        }
        lam = nl;
    }
    // Rayleigh quotients approach from below; pad so 1/L stays a safe step
    lam.max(0.0) * (1.0 + 1e-9)
}

fn clamp(x: &DVector<f64>, b: f64) -> DVector<f64> {
    x.map(|v| v.clamp(-b, b))
}

/// Largest KKT violation of `x` for gradient `g = Hx + Q`.
fn kkt_residual(x: &DVector<f64>, g: &DVector<f64>, bound: f64) -> f64 {
    let edge = 1e-12 * bound;
    x.iter()
        .zip(g.iter())
        .map(|(x, g)| {
            if *x >= bound - edge {
                g.max(0.0)
            } else if *x <= -bound + edge {
                (-g).max(0.0)
            } else {
                g.abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Smallest and largest eigenvalue of the minimized matrix.
pub fn spectrum_bounds(prob: &QpProblem) -> (f64, f64) {
    let ev = prob.objective_h.clone().symmetric_eigenvalues();
    (ev.min(), ev.max())
}

/// Accelerated projected gradient with fixed step `1/L` (`L` by power
/// iteration) from `x = 0`. See [`solve_box_qp_from`].
pub fn solve_box_qp(prob: &QpProblem, tol: f64) -> Result<QpSolution> {
    solve_box_qp_from(prob, &DVector::zeros(prob.n()), tol)
}

/// Projected gradient with fixed step `1/L` and Nesterov momentum. When a
/// momentum step would raise the objective the momentum is dropped and a plain
/// projected-gradient step from the current iterate is taken, so accepted
/// iterates never increase the objective. Stops when the projected-gradient
/// norm `L‖x − P(x − (Hx+Q)/L)‖` is at most `tol`.
pub fn solve_box_qp_from(prob: &QpProblem, start: &DVector<f64>, tol: f64) -> Result<QpSolution> {
    let n = prob.n();
    if start.len() != n {
        return Err(EnsembleError::shape("start vector has the wrong length"));
    }
    if !(tol > 0.0) {
        return Err(EnsembleError::param("tol must be positive"));
    }
    let h = &prob.objective_h;
    let q = &prob.objective_q;
    let (lmin, lmax) = spectrum_bounds(prob);
    if !lmin.is_finite() || lmin < -1e-10 * lmax.abs().max(f64::MIN_POSITIVE) {
        return Err(EnsembleError::numerical(format!(
            "objective matrix is not positive semidefinite: eigenvalues in [{lmin:e}, {lmax:e}]"
        )));
    }
    let l = power_iteration(h).max(lmax * (1.0 + 1e-12));
    let b = prob.bound;
    // f(x) = ½xᵀHx + xᵀQ has the same minimizer; objective = 2f
    let f = |x: &DVector<f64>| 0.5 * x.dot(&(h * x)) + x.dot(q);
    let grad = |x: &DVector<f64>| h * x + q;
    let mut x = clamp(start, b);
    if l == 0.0 {
        // H = 0: minimize a linear function over the box
        let x = q.map(|qi| if qi > 0.0 { -b } else if qi < 0.0 { b } else { 0.0 });
        return Ok(finish(prob, x, 0, vec![]));
    }
    let mut fx = f(&x);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut trace = vec![2.0 * fx];
    for it in 0..MAX_QP_ITERATIONS {
        let gx = grad(&x);
        let pg = (&x - clamp(&(&x - &gx / l), b)).norm() * l;
        if pg <= tol {
            return Ok(finish(prob, x, it, trace));
        }
        let mut xn = clamp(&(&y - grad(&y) / l), b);
        let mut fnew = f(&xn);
        if fnew > fx {
            t = 1.0;
            xn = clamp(&(&x - &gx / l), b);
            fnew = f(&xn);
        }
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &xn + (&xn - &x) * ((t - 1.0) / tn);
        x = xn;
        t = tn;
        fx = fnew;
        trace.push(2.0 * fx);
    }
    Err(EnsembleError::ToleranceNotMet(format!(
        "projected gradient did not reach {tol:e} within {MAX_QP_ITERATIONS} iterations"
    )))
}

fn finish(prob: &QpProblem, x: DVector<f64>, iterations: usize, trace: Vec<f64>) -> QpSolution {
    let g = &prob.objective_h * &x + &prob.objective_q;
    let objective = prob.objective(&x);
    QpSolution {
        objective,
        sinc_objective: prob.sinc_objective(&x),
        continuous_cost: prob.galerkin.then_some(2.0 * objective + 2.0 * prob.beta),
        iterations,
        kkt_residual: kkt_residual(&x, &g, prob.bound),
        objective_trace: trace,
        x: x.iter().copied().collect(),
    }
}

/// `|p(T,ω)|` from `p(0) = 1` under `u = x` (piecewise linear), `v = 0`, by simulation.
pub fn evaluate_final_distance(prob: &QpProblem, x: &DVector<f64>, omega_nodes: &[f64], step_tol: f64) -> Result<Vec<f64>> {
    if x.iter().any(|v| v.abs() > prob.bound * (1.0 + 1e-12)) {
        return Err(EnsembleError::param("control violates the amplitude bound"));
    }
    let u = prob.control(x)?;
    omega_nodes
        .par_iter()
        .map(|w| simulate_scalar(*w, &u, C64::new(1.0, 0.0), step_tol).map(|tr| tr.last().unwrap().norm()))
        .collect()
}

/// `|1 + Σ x_i g_i(ω)|`, the same distances in closed form.
pub fn predicted_final_distance(prob: &QpProblem, x: &DVector<f64>, omega_nodes: &[f64]) -> Vec<f64> {
    omega_nodes
        .iter()
        .map(|w| {
            let g = hat_transforms(&prob.times, *w);
            (C64::new(1.0, 0.0) + g.iter().zip(x.iter()).map(|(g, x)| g * *x).sum::<C64>()).norm()
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PdCertificate {
    pub certified: bool,
    /// Working precision in bits of the successful (or last) attempt.
    pub precision_bits: usize,
    /// Shift `δ` subtracted from the diagonal before factoring, as log10.
    pub log10_shift: f64,
    /// Smallest eigenvalue of the f64-rounded matrix, for comparison.
    pub lambda_min_f64: f64,
}

fn big(x: f64, p: usize) -> BigFloat {
    BigFloat::from_f64(x, p)
}

/// Proves the exact sinc matrix `H` (entries evaluated in multiprecision at
/// times `T·i/(n−1)`) positive definite: a Cholesky factorization of
/// `H − δI` in `p`-bit arithmetic with `δ = 4n²·2^{-p}·max H_ii` exceeding
/// the rounding error bound succeeds only if `λ_min(H) > 0`. Precision
/// doubles from 512 up to 4096 bits.
pub fn certify_positive_definite(t_final: f64, n: usize, beta: f64) -> Result<PdCertificate> {
    if n < 1 || !(t_final > 0.0) || !(beta > 0.0) {
        return Err(EnsembleError::param("need n ≥ 1, T > 0, beta > 0"));
    }
    let lambda_min_f64 = {
        let times = linspace(0.0, t_final, n.max(2));
        let h = DMatrix::from_fn(n, n, |i, j| sinc_ratio(beta, times[i] - times[j]));
        h.symmetric_eigenvalues().min()
    };
    let rm = RoundingMode::ToEven;
    let mut cc = Consts::new().map_err(|e| EnsembleError::numerical(format!("multiprecision init: {e:?}")))?;
    let mut p = 512;
    loop {
        let ok = shifted_cholesky(t_final, n, beta, p, rm, &mut cc)?;
        let log10_shift = (4.0 * (n * n) as f64 * beta).log10() - p as f64 * std::f64::consts::LOG10_2;
        if ok || p >= 4096 {
            return Ok(PdCertificate { certified: ok, precision_bits: p, log10_shift, lambda_min_f64 });
        }
        p *= 2;
    }
}

fn shifted_cholesky(t_final: f64, n: usize, beta: f64, p: usize, rm: RoundingMode, cc: &mut Consts) -> Result<bool> {
    let bt = big(t_final, p);
    let bb = big(beta, p);
    let denom = big(((n.max(2)) - 1) as f64, p);
    let times: Vec<BigFloat> = (0..n).map(|i| bt.mul(&big(i as f64, p), p, rm).div(&denom, p, rm)).collect();
    let shift = big(0.5, p).powi(p, p, rm).mul(&big(4.0 * (n * n) as f64 * beta, p), p, rm);
    let mut a: Vec<Vec<BigFloat>> = vec![vec![BigFloat::new(p); n]; n];
    for i in 0..n {
        for j in 0..=i {
            let v = if i == j {
                bb.sub(&shift, p, rm)
            } else {
                let d = times[i].sub(&times[j], p, rm);
                bb.mul(&d, p, rm).sin(p, rm, cc).div(&d, p, rm)
            };
            if v.is_nan() {
                return Err(EnsembleError::numerical("multiprecision sinc evaluation failed"));
            }
            a[i][j] = v;
        }
    }
    // in-place lower Cholesky
    for j in 0..n {
        let mut s = a[j][j].clone();
        for k in 0..j {
            s = s.sub(&a[j][k].mul(&a[j][k], p, rm), p, rm);
        }
        if !s.is_positive() || s.is_zero() {
            return Ok(false);
        }
        let d = s.sqrt(p, rm);
        a[j][j] = d.clone();
        for i in j + 1..n {
            let mut s = a[i][j].clone();
            for k in 0..j {
                s = s.sub(&a[i][k].mul(&a[j][k], p, rm), p, rm);
            }
            a[i][j] = s.div(&d, p, rm);
        }
    }
    Ok(true)
}
