//! The harmonic oscillator ensemble `d/dt (x,y) = ω[[0,-1],[1,0]](x,y) + (u,v)`,
//! `ω ∈ [ω1, ω2]`, in complex form `dp/dt = iωp + α` with `p = x+iy`, `α = u+iv`.
//!
//! Synthesis works in the frame rotating at the band centre, where the band is
//! `[-β, β]` and `LL*` on a uniform frequency grid is exactly `2π` times the
//! phase-twisted sinc matrix, so the spheroidal sequences diagonalize it.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::control::ControlSignal;
use crate::error::{EnsembleError, Result};
use crate::grid::Grid;
use crate::model::{rotation_generator, simulate_ensemble, SystemSpec, MAX_SUBSTEPS};
use crate::quadrature::{hat_transforms, linspace};
use crate::spheroidal::{continuous_basis, dpss, ContinuousBasis};

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct HarmonicSpec {
    pub omega1: f64,
    pub omega2: f64,
    pub t_final: f64,
    /// Number of frequency samples.
    pub n_freq: usize,
    /// Number of time samples for the synthesized control.
    pub n_time: usize,
    /// Target for `‖Σ c_n φ̃_n − ξ‖` in the `Δω`-weighted norm.
    pub eps: f64,
}

impl HarmonicSpec {
    pub fn new(omega1: f64, omega2: f64, t_final: f64, n_freq: usize, n_time: usize, eps: f64) -> Result<Self> {
        let s = HarmonicSpec { omega1, omega2, t_final, n_freq, n_time, eps };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega1 < self.omega2) || !self.omega1.is_finite() || !self.omega2.is_finite() {
            return Err(EnsembleError::param(format!(
                "frequency band needs omega1 < omega2, got [{}, {}]",
                self.omega1, self.omega2
            )));
        }
        if !(self.t_final > 0.0) {
            return Err(EnsembleError::param("horizon must be positive"));
        }
        if self.n_freq < 2 || self.n_time < 2 {
            return Err(EnsembleError::param("need at least two frequency and two time samples"));
        }
        if !(self.eps >= 0.0) {
            return Err(EnsembleError::param("eps must be nonnegative"));
        }
        let w = self.half_bandwidth();
        if !(w < 0.5) {
            return Err(EnsembleError::param(format!(
                "W = Tβ/(2π(N−1)) = {w} must stay below 1/2; use more frequency samples"
            )));
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        0.5 * (self.omega2 - self.omega1)
    }

    pub fn omega_tilde(&self) -> f64 {
        0.5 * (self.omega1 + self.omega2)
    }

    /// `W = Tβ/(2π(N−1))`.
    pub fn half_bandwidth(&self) -> f64 {
        self.t_final * self.beta() / (2.0 * PI * (self.n_freq - 1) as f64)
    }

    /// Frequencies `ν_j` in the rotating frame, exactly antisymmetric about 0.
    pub fn shifted_nodes(&self) -> Vec<f64> {
        let b = self.beta();
        linspace(-b, b, self.n_freq)
    }

    /// Original frequencies `ω_j = ω̃ + ν_j`.
    pub fn freq_nodes(&self) -> Vec<f64> {
        let wt = self.omega_tilde();
        self.shifted_nodes().iter().map(|v| wt + v).collect()
    }

    pub fn time_nodes(&self) -> Vec<f64> {
        linspace(0.0, self.t_final, self.n_time)
    }

    /// `Δω = 2β/(N−1)`.
    pub fn freq_weight(&self) -> f64 {
        2.0 * self.beta() / (self.n_freq - 1) as f64
    }
}

/// `p(ω_j) = x + iy` on the frequency nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexProfile {
    pub values: Vec<C64>,
}

impl ComplexProfile {
    pub fn new(values: Vec<C64>) -> Result<Self> {
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(EnsembleError::param("profile has non-finite entries"));
        }
        Ok(ComplexProfile { values })
    }

    pub fn constant(value: C64, n: usize) -> Self {
        ComplexProfile { values: vec![value; n] }
    }
}

/// `ũ = u cos(ω̃t) + v sin(ω̃t)`, `ṽ = −u sin(ω̃t) + v cos(ω̃t)`.
pub fn to_symmetric_frame(spec: &HarmonicSpec, times: &[f64], u: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    rotate(spec.omega_tilde(), times, u, v)
}

/// Inverse of [`to_symmetric_frame`].
pub fn from_symmetric_frame(spec: &HarmonicSpec, times: &[f64], ut: &[f64], vt: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    rotate(-spec.omega_tilde(), times, ut, vt)
}

fn rotate(w: f64, times: &[f64], u: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if u.len() != times.len() || v.len() != times.len() {
        return Err(EnsembleError::shape("channels must match the time grid"));
    }
    let mut a = Vec::with_capacity(u.len());
    let mut b = Vec::with_capacity(u.len());
    for ((t, x), y) in times.iter().zip(u).zip(v) {
        let (s, c) = (w * t).sin_cos();
        a.push(x * c + y * s);
        b.push(-x * s + y * c);
    }
    Ok((a, b))
}

/// `ξ(ω_j) = e^{-iω_jT} p_F(ω_j) − p_0(ω_j)`.
pub fn target_offset(spec: &HarmonicSpec, p0: &ComplexProfile, p_final: &ComplexProfile) -> Result<Vec<C64>> {
    let n = spec.n_freq;
    if p0.values.len() != n || p_final.values.len() != n {
        return Err(EnsembleError::shape(format!("profiles must have {n} frequency samples")));
    }
    Ok(spec
        .freq_nodes()
        .iter()
        .zip(p0.values.iter().zip(&p_final.values))
        .map(|(w, (a, b))| C64::new(0.0, -w * spec.t_final).exp() * b - a)
        .collect())
}

#[derive(Debug, Clone)]
pub struct AlphaSynthesis {
    /// `α(t_i)` in the original frame, one complex channel.
    pub alpha: ControlSignal,
    pub n_used: usize,
    pub reached: bool,
    /// `‖Σ_{n<N} c_n φ̃_n − ξ‖` for the chosen `N`.
    pub residual: f64,
    /// The same residual after 0, 1, 2, ... modes.
    pub residual_history: Vec<f64>,
    /// `∫|α_N|²dt = Σ_{n<N} |c_n|²/λ_n` after 0, 1, 2, ... modes.
    pub energy_history: Vec<f64>,
    /// `|ξ(ω_j) − ∫ e^{-iω_jτ} α(τ) dτ|` with `α` piecewise linear between
    /// samples; equals the predicted `|p(T,ω_j) − p_F(ω_j)|`.
    pub residual_per_omega: Vec<f64>,
    pub freq_nodes: Vec<f64>,
    pub xi: Vec<C64>,
    pub coefficients: Vec<C64>,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaSummary {
    pub n_used: usize,
    pub reached: bool,
    pub residual: f64,
    pub alpha_at_zero: f64,
    pub max_predicted_residual: f64,
    pub energy: f64,
    pub lambdas: Vec<f64>,
    pub residual_history: Vec<f64>,
}

impl AlphaSynthesis {
    pub fn alpha_at_zero(&self) -> C64 {
        self.alpha.channels[0][0]
    }

    pub fn max_predicted_residual(&self) -> f64 {
        self.residual_per_omega.iter().copied().fold(0.0, f64::max)
    }

    pub fn summary(&self) -> AlphaSummary {
        AlphaSummary {
            n_used: self.n_used,
            reached: self.reached,
            residual: self.residual,
            alpha_at_zero: self.alpha_at_zero().norm(),
            max_predicted_residual: self.max_predicted_residual(),
            energy: self.energy_history[self.n_used],
            lambdas: self.lambdas.clone(),
            residual_history: self.residual_history.clone(),
        }
    }
}

/// The spheroidal basis on the rotating-frame frequency grid.
pub fn harmonic_basis(spec: &HarmonicSpec) -> Result<ContinuousBasis> {
    spec.validate()?;
    let basis = dpss(spec.n_freq, spec.half_bandwidth(), None)?;
    continuous_basis(&basis, spec.beta(), spec.t_final, &spec.shifted_nodes())
}

/// `(L*g)(t) = Δω Σ_j e^{iν_j t} g_j` at each time, phase factors by a
/// re-seeded rotation recurrence.
fn adjoint_rows(nu: &[f64], times: &[f64], dw: f64, gs: &[&[C64]]) -> Vec<Vec<C64>> {
    let rows: Vec<Vec<C64>> = times
        .par_iter()
        .map(|&t| {
            let step = C64::new(0.0, dw * t).exp();
            let mut z = C64::new(0.0, 0.0);
            let mut acc = vec![C64::new(0.0, 0.0); gs.len()];
            for (j, v) in nu.iter().enumerate() {
                if j % 64 == 0 {
                    z = C64::new(0.0, v * t).exp();
                } else {
                    z *= step;
                }
                for (a, g) in acc.iter_mut().zip(gs) {
                    *a += z * g[j];
                }
            }
            acc.iter().map(|a| a * dw).collect()
        })
        .collect();
    rows
}

/// Minimum-energy `α_N` steering `p0` to `p_final` (the desired `p(T,ω)`).
///
/// Expands `ξ` in `φ̃_n`, takes the smallest `N` meeting `eps`, and applies
/// `L*` mode by mode: `α̃ = Σ (c_n/λ_n) L*φ̃_n`, `α = e^{iω̃t} α̃`.
pub fn synthesize_alpha(spec: &HarmonicSpec, p0: &ComplexProfile, p_final: &ComplexProfile) -> Result<AlphaSynthesis> {
    let basis = harmonic_basis(spec)?;
    synthesize_alpha_with_basis(spec, &basis, p0, p_final)
}

pub fn synthesize_alpha_with_basis(
    spec: &HarmonicSpec,
    basis: &ContinuousBasis,
    p0: &ComplexProfile,
    p_final: &ComplexProfile,
) -> Result<AlphaSynthesis> {
    let xi = target_offset(spec, p0, p_final)?;
    let modes = basis.phi_tilde.len();
    let coeffs: Vec<C64> = basis.phi_tilde.iter().map(|phi| basis.inner(&xi, phi)).collect();
    let mut r = xi.clone();
    let mut residuals = vec![basis.norm(&r)];
    let mut energy = vec![0.0];
    let mut chosen = if residuals[0] <= spec.eps { Some(0) } else { None };
    for k in 0..modes {
        for (rj, pj) in r.iter_mut().zip(&basis.phi_tilde[k]) {
            *rj -= coeffs[k] * pj;
        }
        residuals.push(basis.norm(&r));
        energy.push(energy[k] + coeffs[k].norm_sqr() / basis.lambdas[k]);
        if chosen.is_none() && residuals[k + 1] <= spec.eps {
            chosen = Some(k + 1);
        }
    }
    let reached = chosen.is_some();
    let n_used = chosen.unwrap_or_else(|| {
        (0..residuals.len()).fold(0, |best, k| if residuals[k] < residuals[best] { k } else { best })
    });

    let times = spec.time_nodes();
    let nu = spec.shifted_nodes();
    let gs: Vec<&[C64]> = basis.phi_tilde[..n_used].iter().map(|v| v.as_slice()).collect();
    let per_mode = adjoint_rows(&nu, &times, basis.weight, &gs);
    let wt = spec.omega_tilde();
    let alpha: Vec<C64> = times
        .iter()
        .zip(&per_mode)
        .map(|(t, row)| {
            // small modes last so their large weights do not swamp the sum's rounding
            let mut a = C64::new(0.0, 0.0);
            for k in (0..n_used).rev() {
                a += row[k] * (coeffs[k] / basis.lambdas[k]);
            }
            C64::new(0.0, wt * t).exp() * a
        })
        .collect();

    let freq = spec.freq_nodes();
    let residual_per_omega: Vec<f64> = freq
        .par_iter()
        .zip(xi.par_iter())
        .map(|(w, x)| {
            let g = hat_transforms(&times, *w);
            let la: C64 = g.iter().zip(&alpha).map(|(g, a)| g * a).sum();
            (x - la).norm()
        })
        .collect();

    Ok(AlphaSynthesis {
        alpha: ControlSignal::new(times, vec![alpha])?,
        n_used,
        reached,
        residual: residuals[n_used],
        residual_history: residuals,
        energy_history: energy,
        residual_per_omega,
        freq_nodes: freq,
        xi,
        coefficients: coeffs,
        lambdas: basis.lambdas.clone(),
    })
}

/// RK4 for `dp/dt = iωp + α(t)` with `α` piecewise linear, recording `p` at
/// every sample time; step halving until the endpoint moves less than `step_tol`.
pub fn simulate_scalar(omega: f64, alpha: &ControlSignal, p0: C64, step_tol: f64) -> Result<Vec<C64>> {
    if alpha.m() != 1 {
        return Err(EnsembleError::shape("scalar oscillator takes one complex channel"));
    }
    if !(step_tol > 0.0) {
        return Err(EnsembleError::param("step_tol must be positive"));
    }
    let a = &alpha.channels[0];
    let t = &alpha.times;
    let iw = C64::new(0.0, omega);
    let pass = |k: usize| -> Vec<C64> {
        let mut out = Vec::with_capacity(t.len());
        let mut p = p0;
        out.push(p);
        for i in 0..t.len() - 1 {
            let h = (t[i + 1] - t[i]) / k as f64;
            let (a0, a1) = (a[i], a[i + 1]);
            let at = |th: f64| a0 * (1.0 - th) + a1 * th;
            for s in 0..k {
                let th0 = s as f64 / k as f64;
                let thm = (s as f64 + 0.5) / k as f64;
                let th1 = (s + 1) as f64 / k as f64;
                let (f0, fm, f1) = (at(th0), at(thm), at(th1));
                let k1 = iw * p + f0;
                let k2 = iw * (p + k1 * (0.5 * h)) + fm;
                let k3 = iw * (p + k2 * (0.5 * h)) + fm;
                let k4 = iw * (p + k3 * h) + f1;
                p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            out.push(p);
        }
        out
    };
    let mut k = 1;
    let mut prev = pass(k);
    loop {
        k *= 2;
        if k > MAX_SUBSTEPS {
            return Err(EnsembleError::ToleranceNotMet(format!(
                "oscillator at ω = {omega} did not meet step_tol {step_tol:e}"
            )));
        }
        let next = pass(k);
        let d = (next.last().unwrap() - prev.last().unwrap()).norm();
        if !d.is_finite() {
            return Err(EnsembleError::Integration { t: *t.last().unwrap(), s: omega, reason: "non-finite state".into() });
        }
        if d < step_tol {
            return Ok(next);
        }
        prev = next;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationCheck {
    pub freq_nodes: Vec<f64>,
    /// `p(T, ω_j)` as `(re, im)`.
    pub final_states: Vec<(f64, f64)>,
    /// `|p(T,ω_j) − p_F(ω_j)|`.
    pub deviation: Vec<f64>,
    pub max_deviation: f64,
}

/// Simulates every frequency node under `alpha` and measures the endpoint error.
pub fn verify_by_simulation(
    spec: &HarmonicSpec,
    alpha: &ControlSignal,
    p0: &ComplexProfile,
    p_final: &ComplexProfile,
    step_tol: f64,
) -> Result<SimulationCheck> {
    let freq = spec.freq_nodes();
    if p0.values.len() != freq.len() || p_final.values.len() != freq.len() {
        return Err(EnsembleError::shape("profiles must match the frequency grid"));
    }
    let finals: Vec<C64> = freq
        .par_iter()
        .zip(p0.values.par_iter())
        .map(|(w, p)| simulate_scalar(*w, alpha, *p, step_tol).map(|tr| *tr.last().unwrap()))
        .collect::<Result<_>>()?;
    let deviation: Vec<f64> = finals.iter().zip(&p_final.values).map(|(a, b)| (a - b).norm()).collect();
    Ok(SimulationCheck {
        freq_nodes: freq,
        final_states: finals.iter().map(|z| (z.re, z.im)).collect(),
        max_deviation: deviation.iter().copied().fold(0.0, f64::max),
        deviation,
    })
}

/// The real 2×2 family with only the `u` input (`v ≡ 0`) on `[ω1, ω2]`.
pub fn u_only_spec(spec: &HarmonicSpec) -> Result<SystemSpec> {
    SystemSpec::new(
        "harmonic_u_only",
        2,
        1,
        Arc::new(|_, w| rotation_generator(w)),
        Arc::new(|_, _| DMatrix::from_column_slice(2, 1, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0)])),
        spec.t_final,
        (spec.omega1, spec.omega2),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct WitnessReport {
    /// `max |x(t,ω) − x(t,−ω)|`.
    pub max_x_tilde: f64,
    /// `max |y(t,ω) + y(t,−ω)|`.
    pub max_y_tilde: f64,
    /// `max |(x,y)|` over the whole simulation, for scaling.
    pub trajectory_scale: f64,
    /// `max(max_x_tilde, max_y_tilde) / trajectory_scale` (0 for a zero trajectory).
    pub relative: f64,
}

/// Simulates the `v ≡ 0` ensemble from the origin on a frequency grid that is
/// symmetric about 0 and forms `X̃ = x(t,ω) − x(t,−ω)`, `Ỹ = y(t,ω) + y(t,−ω)`,
/// which stay at the origin.
pub fn noncontrollability_witness(
    spec: &HarmonicSpec,
    freq_nodes: &[f64],
    u: &ControlSignal,
    step_tol: f64,
) -> Result<WitnessReport> {
    let n = freq_nodes.len();
    for j in 0..n {
        if freq_nodes[j] != -freq_nodes[n - 1 - j] {
            return Err(EnsembleError::param("frequency grid must be symmetric about 0"));
        }
    }
    if u.m() != 1 || u.channels[0].iter().any(|z| z.im != 0.0) {
        return Err(EnsembleError::param("witness takes a single real control channel"));
    }
    let sys = u_only_spec(spec)?;
    let grid = Grid::trapezoid(u.times.clone(), freq_nodes.to_vec())?;
    let x0 = vec![DVector::zeros(2); n];
    let traj = simulate_ensemble(&sys, &grid, &x0, u, step_tol)?;
    let mut mx = 0.0f64;
    let mut my = 0.0f64;
    let mut scale = 0.0f64;
    for j in 0..n {
        let k = n - 1 - j;
        for i in 0..u.len() {
            let a = &traj.states[j][i];
            let b = &traj.states[k][i];
            mx = mx.max((a[0] - b[0]).norm());
            my = my.max((a[1] + b[1]).norm());
            scale = scale.max(a.norm());
        }
    }
    Ok(WitnessReport {
        max_x_tilde: mx,
        max_y_tilde: my,
        trajectory_scale: scale,
        relative: if scale > 0.0 { mx.max(my) / scale } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig_spec(n_freq: usize, n_time: usize) -> HarmonicSpec {
        HarmonicSpec::new(-10.0, 10.0, 1.0, n_freq, n_time, 1e-8).unwrap()
    }

    #[test]
    fn frame_identity_when_centred() {
        let s = fig_spec(11, 5);
        let t = s.time_nodes();
        let u = vec![1.0, -2.0, 0.5, 3.0, 0.0];
        let v = vec![0.0, 1.0, 1.0, -1.0, 2.0];
        let (a, b) = to_symmetric_frame(&s, &t, &u, &v).unwrap();
        assert_eq!(a, u);
        assert_eq!(b, v);
    }

    #[test]
    fn frame_rotation_identities() {
        let s = HarmonicSpec::new(2.0, 8.0, 1.5, 21, 31, 1e-6).unwrap();
        let t = s.time_nodes();
        let wt = s.omega_tilde();
        let u: Vec<f64> = t.iter().map(|t| (wt * t).cos()).collect();
        let v: Vec<f64> = t.iter().map(|t| (wt * t).sin()).collect();
        let (a, b) = to_symmetric_frame(&s, &t, &u, &v).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - 1.0).abs() < 1e-15 && y.abs() < 1e-15);
        }
        let u2: Vec<f64> = t.iter().map(|t| (3.0 * t).sin() + t).collect();
        let v2: Vec<f64> = t.iter().map(|t| (t * t).cos()).collect();
        let (a, b) = to_symmetric_frame(&s, &t, &u2, &v2).unwrap();
        let (c, d) = from_symmetric_frame(&s, &t, &a, &b).unwrap();
        for i in 0..t.len() {
            assert!((c[i] - u2[i]).abs() < 1e-12 && (d[i] - v2[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn offsets_for_the_two_figure_cases() {
        let s = fig_spec(101, 11);
        let zero = ComplexProfile::constant(C64::new(0.0, 0.0), 101);
        let xi = target_offset(&s, &ComplexProfile::constant(C64::new(1.0, 0.0), 101), &zero).unwrap();
        assert!(xi.iter().all(|z| *z == C64::new(-1.0, 0.0)));
        let xi = target_offset(&s, &ComplexProfile::constant(C64::new(1.0, 2.0), 101), &zero).unwrap();
        assert!(xi.iter().all(|z| *z == C64::new(-1.0, -2.0)));
    }

    #[test]
    fn free_evolution_target_needs_no_control() {
        let s = fig_spec(101, 21);
        let p0 = ComplexProfile::new(s.freq_nodes().iter().map(|w| C64::new(1.0 + 0.1 * w, 0.3)).collect()).unwrap();
        let pf = ComplexProfile::new(
            s.freq_nodes().iter().zip(&p0.values).map(|(w, p)| C64::new(0.0, w * s.t_final).exp() * p).collect(),
        )
        .unwrap();
        let syn = synthesize_alpha(&s, &p0, &pf).unwrap();
        assert_eq!(syn.n_used, 0);
        assert!(syn.alpha.channels[0].iter().all(|z| *z == C64::new(0.0, 0.0)));
    }

    #[test]
    fn free_rotation_without_control() {
        let t = linspace(0.0, 1.0, 11);
        let a = ControlSignal::zeros(&t, 1);
        let p0 = C64::new(0.3, -1.2);
        let tr = simulate_scalar(7.0, &a, p0, 1e-12).unwrap();
        let exact = C64::new(0.0, 7.0).exp() * p0;
        assert!((tr[10] - exact).norm() < 1e-11);
    }

    #[test]
    fn witness_requires_symmetric_grid() {
        let s = fig_spec(11, 11);
        let u = ControlSignal::zeros(&s.time_nodes(), 1);
        assert!(noncontrollability_witness(&s, &[-1.0, 0.0, 2.0], &u, 1e-9).is_err());
        let r = noncontrollability_witness(&s, &[-2.0, 0.0, 2.0], &u, 1e-9).unwrap();
        assert_eq!(r.max_x_tilde, 0.0);
        assert_eq!(r.max_y_tilde, 0.0);
    }

    #[test]
    fn rejects_too_coarse_frequency_grid() {
        // W = Tβ/(2π(N−1)) ≥ 1/2
        assert!(HarmonicSpec::new(-10.0, 10.0, 10.0, 10, 11, 1e-3).is_err());
    }
}
