//! The control-to-endpoint operator `(Lu)(s) = ∫ Φ(0,τ;s) B(τ,s) u(τ) dτ`,
//! its adjoint, singular system and the truncated minimum-norm synthesis.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::control::ControlSignal;
use crate::error::{EnsembleError, Result};
use crate::grid::Grid;
use crate::model::{SystemSpec, TransitionTensor};

/// Relative rank cutoff applied when none is supplied.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

/// Residual at or below which the range condition counts as met at the
/// current resolution.
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-3;

/// Quadrature discretization of `L`.
///
/// `kernel` stacks the blocks `h(s_j, t_i) = Φ(0,t_i;s_j) B(t_i,s_j)`; row
/// `j*n + k` is state component `k` at parameter node `j`, column `i*m + c` is
/// input channel `c` at time node `i`. `weighted = D_s^{1/2} kernel D_t^{1/2}`.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub grid: Grid,
    pub n: usize,
    pub m: usize,
    pub kernel: DMatrix<C64>,
    pub weighted: DMatrix<C64>,
}

/// Per-node target offset `ξ(s_j)` (also used for any parameter-domain function).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetOffset {
    pub values: Vec<DVector<C64>>,
}

impl TargetOffset {
    pub fn new(values: Vec<DVector<C64>>) -> Result<Self> {
        if values.iter().flat_map(|v| v.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(EnsembleError::param("target offset has non-finite entries"));
        }
        Ok(TargetOffset { values })
    }

    /// Flattened with index `j*n + k`.
    pub fn to_flat(&self) -> DVector<C64> {
        let n = self.values.first().map_or(0, |v| v.len());
        DVector::from_fn(self.values.len() * n, |r, _| self.values[r / n][r % n])
    }

    pub fn from_flat(n: usize, flat: &DVector<C64>) -> Self {
        let ns = flat.len() / n;
        TargetOffset { values: (0..ns).map(|j| flat.rows(j * n, n).into_owned()).collect() }
    }
}

fn replicate(weights: &[f64], k: usize) -> Vec<f64> {
    weights.iter().flat_map(|w| std::iter::repeat_n(*w, k)).collect()
}

/// `Σ w a conj(b)`; linear in the first argument.
pub fn weighted_inner(a: &DVector<C64>, b: &DVector<C64>, w: &[f64]) -> C64 {
    a.iter().zip(b.iter()).zip(w).map(|((x, y), w)| x * y.conj() * *w).sum()
}

pub fn weighted_norm(a: &DVector<C64>, w: &[f64]) -> f64 {
    a.iter().zip(w).map(|(x, w)| w * x.norm_sqr()).sum::<f64>().sqrt()
}

impl DiscreteOperator {
    /// Operator from an explicit kernel matrix laid out as described on the type.
    pub fn from_kernel(grid: Grid, n: usize, m: usize, kernel: DMatrix<C64>) -> Result<Self> {
        grid.validate()?;
        if kernel.shape() != (n * grid.n_param(), m * grid.n_time()) {
            return Err(EnsembleError::shape(format!(
                "kernel is {:?}, expected {}x{}",
                kernel.shape(),
                n * grid.n_param(),
                m * grid.n_time()
            )));
        }
        if kernel.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(EnsembleError::numerical("kernel has non-finite entries"));
        }
        let ws: Vec<f64> = replicate(&grid.param_weights, n).iter().map(|w| w.sqrt()).collect();
        let wt: Vec<f64> = replicate(&grid.time_weights, m).iter().map(|w| w.sqrt()).collect();
        let weighted = DMatrix::from_fn(kernel.nrows(), kernel.ncols(), |r, c| kernel[(r, c)] * (ws[r] * wt[c]));
        Ok(DiscreteOperator { grid, n, m, kernel, weighted })
    }

    pub fn param_weights_flat(&self) -> Vec<f64> {
        replicate(&self.grid.param_weights, self.n)
    }

    pub fn time_weights_flat(&self) -> Vec<f64> {
        replicate(&self.grid.time_weights, self.m)
    }

    pub fn block(&self, j: usize, i: usize) -> DMatrix<C64> {
        self.kernel.view((j * self.n, i * self.m), (self.n, self.m)).into_owned()
    }

    /// Trapezoid evaluation of `(Lu)(s_j)` on flat time-major samples.
    pub fn apply_flat(&self, u: &DVector<C64>) -> DVector<C64> {
        let w = self.time_weights_flat();
        let wu = DVector::from_iterator(u.len(), u.iter().zip(&w).map(|(z, w)| z * *w));
        &self.kernel * wu
    }

    /// Trapezoid evaluation of `(L*f)(t_i)` on flat parameter samples.
    pub fn apply_adjoint_flat(&self, f: &DVector<C64>) -> DVector<C64> {
        let w = self.param_weights_flat();
        let wf = DVector::from_iterator(f.len(), f.iter().zip(&w).map(|(z, w)| z * *w));
        self.kernel.adjoint() * wf
    }

    pub fn apply(&self, u: &ControlSignal) -> Result<TargetOffset> {
        if u.m() != self.m || u.len() != self.grid.n_time() {
            return Err(EnsembleError::shape(format!(
                "control is {}x{}, operator expects {}x{}",
                u.m(),
                u.len(),
                self.m,
                self.grid.n_time()
            )));
        }
        Ok(TargetOffset::from_flat(self.n, &self.apply_flat(&u.to_flat())))
    }
}

/// Kernel blocks `G_i(s_j)/w_i` from the hat moments `G_i = ∫Φ(0,t;s)B φ_i dt`.
///
/// With time weights `w_i` this makes `L u = Σ_i G_i u_i`, the exact endpoint
/// offset of the piecewise-linear control through its samples, so predicted
/// residuals agree with simulation up to the integration tolerance. Up to
/// `O(h²)` the blocks are the point values `Φ(0,t_i;s_j) B(t_i,s_j)`.
pub fn assemble(spec: &SystemSpec, grid: &Grid, transitions: &TransitionTensor) -> Result<DiscreteOperator> {
    if transitions.time_nodes != grid.time_nodes || transitions.param_nodes != grid.param_nodes {
        return Err(EnsembleError::shape("transition tensor was computed on a different grid"));
    }
    let (n, m) = (spec.n, spec.m);
    let (ns, nt) = (grid.n_param(), grid.n_time());
    let mut kernel = DMatrix::<C64>::zeros(n * ns, m * nt);
    for j in 0..ns {
        for i in 0..nt {
            let g = &transitions.hat_moments[j][i];
            if g.shape() != (n, m) {
                return Err(EnsembleError::shape("hat moments do not match the system's dimensions"));
            }
            let h = g / C64::new(grid.time_weights[i], 0.0);
            kernel.view_mut((j * n, i * m), (n, m)).copy_from(&h);
        }
    }
    DiscreteOperator::from_kernel(grid.clone(), n, m, kernel)
}

/// Weighted trapezoid evaluation of `(L*f)(t_i) = ∫ B† Φ†(0,t_i;s) f(s) ds`.
pub fn apply_adjoint(op: &DiscreteOperator, f: &TargetOffset) -> Result<ControlSignal> {
    if f.values.len() != op.grid.n_param() || f.values.iter().any(|v| v.len() != op.n) {
        return Err(EnsembleError::shape(format!(
            "parameter function must have {} entries of length {}",
            op.grid.n_param(),
            op.n
        )));
    }
    ControlSignal::from_flat(&op.grid.time_nodes, op.m, &op.apply_adjoint_flat(&f.to_flat()))
}

/// `(σ_n, μ_n, ν_n)` with `μ_n` orthonormal in the weighted time inner
/// product and `ν_n` in the weighted parameter inner product.
#[derive(Debug, Clone)]
pub struct SingularSystem {
    pub sigmas: Vec<f64>,
    /// Flat time-major samples of `μ_n`.
    pub left_functions: Vec<DVector<C64>>,
    /// Flat samples of `ν_n` (index `j*n + k`).
    pub right_functions: Vec<DVector<C64>>,
    /// Number of retained triples.
    pub rank_cutoff: usize,
    pub rank_tol: f64,
    pub n: usize,
    pub m: usize,
    pub time_nodes: Vec<f64>,
    pub time_weights: Vec<f64>,
    pub param_weights: Vec<f64>,
    /// Singular values below the cutoff, kept for reporting.
    pub discarded_sigmas: Vec<f64>,
}

impl SingularSystem {
    pub fn time_inner(&self, a: &DVector<C64>, b: &DVector<C64>) -> C64 {
        weighted_inner(a, b, &self.time_weights)
    }

    pub fn param_inner(&self, a: &DVector<C64>, b: &DVector<C64>) -> C64 {
        weighted_inner(a, b, &self.param_weights)
    }

    pub fn time_norm(&self, a: &DVector<C64>) -> f64 {
        weighted_norm(a, &self.time_weights)
    }

    pub fn param_norm(&self, a: &DVector<C64>) -> f64 {
        weighted_norm(a, &self.param_weights)
    }

    /// `c_n = ⟨ξ, ν_n⟩` for every retained mode.
    pub fn coefficients(&self, xi: &DVector<C64>) -> Vec<C64> {
        self.right_functions.iter().map(|nu| self.param_inner(xi, nu)).collect()
    }
}

/// SVD of the weighted matrix, un-embedded from the weight metric and cut at
/// `σ_n ≤ σ_1·rank_tol`.
pub fn singular_system(op: &DiscreteOperator, rank_tol: f64) -> Result<SingularSystem> {
    if !(rank_tol >= 0.0) {
        return Err(EnsembleError::param("rank_tol must be nonnegative"));
    }
    let svd = nalgebra::SVD::try_new(op.weighted.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| EnsembleError::numerical("SVD of the weighted operator did not converge"))?;
    let u = svd.u.as_ref().ok_or_else(|| EnsembleError::numerical("SVD returned no left vectors"))?;
    let v_t = svd.v_t.as_ref().ok_or_else(|| EnsembleError::numerical("SVD returned no right vectors"))?;
    let sv = &svd.singular_values;
    let sigma1 = if sv.is_empty() { 0.0 } else { sv[0] };
    let cut = sigma1 * rank_tol;
    let tw = op.time_weights_flat();
    let pw = op.param_weights_flat();
    let mut sigmas = Vec::new();
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut discarded = Vec::new();
    for k in 0..sv.len() {
        let s = sv[k];
        if !(s > cut) || s == 0.0 {
            discarded.push(s);
            continue;
        }
        sigmas.push(s);
        left.push(DVector::from_iterator(
            tw.len(),
            v_t.row(k).iter().zip(&tw).map(|(z, w)| z.conj() / w.sqrt()),
        ));
        right.push(DVector::from_iterator(pw.len(), u.column(k).iter().zip(&pw).map(|(z, w)| z / w.sqrt())));
    }
    Ok(SingularSystem {
        rank_cutoff: sigmas.len(),
        sigmas,
        left_functions: left,
        right_functions: right,
        rank_tol,
        n: op.n,
        m: op.m,
        time_nodes: op.grid.time_nodes.clone(),
        time_weights: tw,
        param_weights: pw,
        discarded_sigmas: discarded,
    })
}

/// `ξ(s_j) = Φ(0,T;s_j) x_F(s_j) − x_0(s_j)`.
pub fn target_offset(
    transitions: &TransitionTensor,
    x0: &[DVector<C64>],
    x_final: &[DVector<C64>],
) -> Result<TargetOffset> {
    let ns = transitions.param_nodes.len();
    if x0.len() != ns || x_final.len() != ns {
        return Err(EnsembleError::shape(format!(
            "profiles must have one state per parameter node ({ns}), got {} and {}",
            x0.len(),
            x_final.len()
        )));
    }
    let mut values = Vec::with_capacity(ns);
    for j in 0..ns {
        let psi = transitions.inverse_at_final(j);
        if x0[j].len() != psi.nrows() || x_final[j].len() != psi.nrows() {
            return Err(EnsembleError::shape(format!("state at node {j} has the wrong dimension")));
        }
        values.push(psi * &x_final[j] - &x0[j]);
    }
    TargetOffset::new(values)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PicardThresholds {
    /// Relative range residual at or below which condition (ii) is met.
    pub residual_tol: f64,
    /// Minimum fitted exponent `p` in `|c_n| ~ σ_n^p` for the series
    /// `Σ |c_n|²/σ_n²` to be read as convergent.
    pub min_decay_exponent: f64,
}

impl Default for PicardThresholds {
    fn default() -> Self {
        PicardThresholds { residual_tol: DEFAULT_RESIDUAL_TOL, min_decay_exponent: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PicardReport {
    /// `c_n = ⟨ξ, ν_n⟩` as `(re, im)`.
    pub coefficients: Vec<(f64, f64)>,
    pub sigmas: Vec<f64>,
    /// Partial sums of `|c_n|²/σ_n²`.
    pub partial_sums: Vec<f64>,
    /// `‖ξ − Σ c_n ν_n‖ / ‖ξ‖` (0 for ξ = 0).
    pub range_residual: f64,
    /// Least-squares slope of `log|c_n|` against `log σ_n` over modes above
    /// the rounding floor; `None` with fewer than two such modes.
    pub decay_exponent: Option<f64>,
    pub thresholds: PicardThresholds,
    pub series_condition_met: bool,
    pub range_condition_met: bool,
}

/// Finite-rank proxies for the two solvability conditions: growth of
/// `Σ |c_n|²/σ_n²` and the relative residual of the projection of ξ onto the
/// retained `ν_n`.
pub fn picard_diagnostic(sing: &SingularSystem, xi: &TargetOffset, thresholds: PicardThresholds) -> Result<PicardReport> {
    let x = xi.to_flat();
    if x.len() != sing.param_weights.len() {
        return Err(EnsembleError::shape("target offset does not live on the singular system's grid"));
    }
    let coeffs = sing.coefficients(&x);
    let mut partial = Vec::with_capacity(coeffs.len());
    let mut acc = 0.0;
    let mut r = x.clone();
    for (c, (s, nu)) in coeffs.iter().zip(sing.sigmas.iter().zip(&sing.right_functions)) {
        acc += c.norm_sqr() / (s * s);
        partial.push(acc);
        r -= nu * *c;
    }
    let xn = sing.param_norm(&x);
    let range_residual = if xn == 0.0 { 0.0 } else { sing.param_norm(&r) / xn };

    let cmax = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = coeffs
        .iter()
        .zip(&sing.sigmas)
        .filter(|(c, _)| c.norm() > 1e-13 * cmax.max(xn) && c.norm() > 0.0)
        .map(|(c, s)| (s.ln(), c.norm().ln()))
        .collect();
    let decay_exponent = if pts.len() >= 2 {
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        if sxx > 0.0 {
            Some(sxy / sxx)
        } else {
            None
        }
    } else {
        None
    };
    let series_condition_met = match decay_exponent {
        Some(p) => p >= thresholds.min_decay_exponent,
        // one mode or none: the sum is trivially finite
        None => true,
    };
    Ok(PicardReport {
        coefficients: coeffs.iter().map(|c| (c.re, c.im)).collect(),
        sigmas: sing.sigmas.clone(),
        partial_sums: partial,
        range_residual,
        decay_exponent,
        thresholds,
        series_condition_met,
        range_condition_met: range_residual <= thresholds.residual_tol,
    })
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub control: ControlSignal,
    /// Number of modes in `u_N`.
    pub n_used: usize,
    /// `‖ξ − L u_N‖` in the weighted parameter norm.
    pub achieved_residual: f64,
    /// False when `eps` could not be met with the retained modes.
    pub reached: bool,
    /// Residual after 0, 1, 2, ... modes.
    pub residual_history: Vec<f64>,
    /// `‖u_N‖` after 0, 1, 2, ... modes (weighted time norm).
    pub norm_history: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisSummary {
    pub n_used: usize,
    pub achieved_residual: f64,
    pub reached: bool,
    pub control_norm: f64,
    pub residual_history: Vec<f64>,
}

impl Synthesis {
    pub fn summary(&self) -> SynthesisSummary {
        SynthesisSummary {
            n_used: self.n_used,
            achieved_residual: self.achieved_residual,
            reached: self.reached,
            control_norm: self.norm_history[self.n_used],
            residual_history: self.residual_history.clone(),
        }
    }
}

fn combine_modes(sing: &SingularSystem, coeffs: &[C64], n_modes: usize) -> DVector<C64> {
    let mut u = DVector::<C64>::zeros(sing.time_weights.len());
    for k in 0..n_modes {
        u += &sing.left_functions[k] * (coeffs[k] / sing.sigmas[k]);
    }
    u
}

/// `u_N = Σ_{n≤N} (c_n/σ_n) μ_n` with `N` the smallest index whose residual
/// `‖ξ − L u_N‖` is at most `eps`. If no such `N` exists among the retained
/// modes, the `N` with the smallest residual is used and `reached` is false.
pub fn synthesize_min_norm(sing: &SingularSystem, xi: &TargetOffset, eps: f64) -> Result<Synthesis> {
    if !(eps >= 0.0) {
        return Err(EnsembleError::param("eps must be nonnegative"));
    }
    let x = xi.to_flat();
    if x.len() != sing.param_weights.len() {
        return Err(EnsembleError::shape("target offset does not live on the singular system's grid"));
    }
    let coeffs = sing.coefficients(&x);
    let mut r = x.clone();
    let mut residuals = vec![sing.param_norm(&r)];
    let mut norms = vec![0.0];
    let mut energy = 0.0;
    let mut chosen = if residuals[0] <= eps { Some(0) } else { None };
    for k in 0..sing.rank_cutoff {
        r -= &sing.right_functions[k] * coeffs[k];
        residuals.push(sing.param_norm(&r));
        energy += (coeffs[k] / sing.sigmas[k]).norm_sqr();
        norms.push(energy.sqrt());
        if chosen.is_none() && residuals[k + 1] <= eps {
            chosen = Some(k + 1);
        }
    }
    let reached = chosen.is_some();
    let n_used = chosen.unwrap_or_else(|| {
        let mut best = 0;
        for (k, r) in residuals.iter().enumerate() {
            if *r < residuals[best] {
                best = k;
            }
        }
        best
    });
    let u = combine_modes(sing, &coeffs, n_used);
    Ok(Synthesis {
        control: ControlSignal::from_flat(&sing.time_nodes, sing.m, &u)?,
        n_used,
        achieved_residual: residuals[n_used],
        reached,
        residual_history: residuals,
        norm_history: norms,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IllPosednessReport {
    /// 1-based mode index.
    pub mode: usize,
    pub sigma: f64,
    pub amplitude: f64,
    /// Measured `‖ξ̃ − ξ‖`.
    pub xi_perturbation_norm: f64,
    /// Measured `‖ũ − u‖`.
    pub control_perturbation_norm: f64,
    /// Measured ratio of the two norms (`1/σ_n` when `a = 0`).
    pub amplification: f64,
    /// `1/σ_n`.
    pub predicted_amplification: f64,
}

/// Perturbs `ξ̃ = ξ + a√σ_n ν_n`, re-synthesizes with every retained mode and
/// measures both perturbation norms directly.
pub fn illposedness_demo(sing: &SingularSystem, xi: &TargetOffset, mode: usize, amplitude: f64) -> Result<IllPosednessReport> {
    if mode == 0 || mode > sing.rank_cutoff {
        return Err(EnsembleError::param(format!(
            "mode index must be in 1..={}, got {mode}",
            sing.rank_cutoff
        )));
    }
    let x = xi.to_flat();
    if x.len() != sing.param_weights.len() {
        return Err(EnsembleError::shape("target offset does not live on the singular system's grid"));
    }
    let k = mode - 1;
    let sigma = sing.sigmas[k];
    let xt = &x + &sing.right_functions[k] * C64::new(amplitude * sigma.sqrt(), 0.0);
    let full = sing.rank_cutoff;
    let u = combine_modes(sing, &sing.coefficients(&x), full);
    let ut = combine_modes(sing, &sing.coefficients(&xt), full);
    let dxi = sing.param_norm(&(&xt - &x));
    let du = sing.time_norm(&(&ut - &u));
    let amplification = if dxi > 0.0 { du / dxi } else { 1.0 / sigma };
    Ok(IllPosednessReport {
        mode,
        sigma,
        amplitude,
        xi_perturbation_norm: dxi,
        control_perturbation_norm: du,
        amplification,
        predicted_amplification: 1.0 / sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{transition_matrices, Family};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn constant_kernel_op(nt: usize, ns: usize) -> DiscreteOperator {
        let grid = Grid::uniform(1.0, nt, (0.0, 1.0), ns).unwrap();
        DiscreteOperator::from_kernel(grid, 1, 1, DMatrix::from_element(ns, nt, c(1.0))).unwrap()
    }

    fn random_op(rng: &mut ChaCha8Rng, nt: usize, ns: usize, n: usize, m: usize) -> DiscreteOperator {
        let grid = Grid::uniform(1.0 + rng.gen::<f64>(), nt, (-1.0, 1.0), ns).unwrap();
        let k = DMatrix::from_fn(n * ns, m * nt, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        DiscreteOperator::from_kernel(grid, n, m, k).unwrap()
    }

    #[test]
    fn constant_kernel_integrates_to_horizon() {
        let spec = Family::Diagonal { rates: vec![0.0], t_final: 2.0, s1: 0.0, s2: 1.0 }.build().unwrap();
        let grid = Grid::uniform(2.0, 11, (0.0, 1.0), 4).unwrap();
        let tt = transition_matrices(&spec, &grid, 1e-12).unwrap();
        let op = assemble(&spec, &grid, &tt).unwrap();
        let u = ControlSignal::from_real(grid.time_nodes.clone(), vec![vec![1.0; 11]]).unwrap();
        let lu = op.apply(&u).unwrap();
        for v in &lu.values {
            assert!((v[0] - c(2.0)).norm() < 1e-13);
        }
    }

    #[test]
    fn constant_kernel_has_single_unit_singular_value() {
        let op = constant_kernel_op(21, 11);
        let sing = singular_system(&op, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(sing.rank_cutoff, 1);
        assert!((sing.sigmas[0] - 1.0).abs() < 1e-12);
        // up to a common unimodular phase, μ_1 ≡ 1 and ν_1 ≡ 1
        let ph = sing.left_functions[0][0];
        for z in sing.left_functions[0].iter() {
            assert!((z - ph).norm() < 1e-12);
        }
        assert!((ph.norm() - 1.0).abs() < 1e-12);
        let ph2 = sing.right_functions[0][0];
        for z in sing.right_functions[0].iter() {
            assert!((z - ph2).norm() < 1e-12);
        }
        assert!((ph2.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adjoint_of_zero_is_zero() {
        let op = constant_kernel_op(5, 4);
        let f = TargetOffset::new(vec![DVector::zeros(1); 4]).unwrap();
        let g = apply_adjoint(&op, &f).unwrap();
        assert!(g.channels[0].iter().all(|z| *z == c(0.0)));
    }

    #[test]
    fn singular_relations_and_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let op = random_op(&mut rng, 9, 6, 2, 2);
        let sing = singular_system(&op, DEFAULT_RANK_TOL).unwrap();
        let s1 = sing.sigmas[0];
        for k in 0..sing.rank_cutoff {
            let lmu = op.apply_flat(&sing.left_functions[k]);
            let lsnu = op.apply_adjoint_flat(&sing.right_functions[k]);
            assert!((lmu - &sing.right_functions[k] * c(sing.sigmas[k])).amax_norm() < 1e-10 * s1);
            assert!((lsnu - &sing.left_functions[k] * c(sing.sigmas[k])).amax_norm() < 1e-10 * s1);
            for l in 0..sing.rank_cutoff {
                let d = if k == l { 1.0 } else { 0.0 };
                assert!((sing.time_inner(&sing.left_functions[k], &sing.left_functions[l]) - c(d)).norm() < 1e-10);
                assert!((sing.param_inner(&sing.right_functions[k], &sing.right_functions[l]) - c(d)).norm() < 1e-10);
            }
        }
        // H = Σ σ ν μ† D_t reproduces the kernel
        let tw = op.time_weights_flat();
        let mut rec = DMatrix::<C64>::zeros(op.kernel.nrows(), op.kernel.ncols());
        for k in 0..sing.rank_cutoff {
            rec += &sing.right_functions[k] * sing.left_functions[k].adjoint() * c(sing.sigmas[k]);
        }
        let sq: Vec<f64> = op.param_weights_flat().iter().map(|w| w.sqrt()).collect();
        let wrec = DMatrix::from_fn(rec.nrows(), rec.ncols(), |r, cc| rec[(r, cc)] * sq[r] * tw[cc].sqrt());
        assert!((wrec - &op.weighted).amax_norm() < 1e-10 * s1);
    }

    trait AmaxNorm {
        fn amax_norm(&self) -> f64;
    }
    impl AmaxNorm for DMatrix<C64> {
        fn amax_norm(&self) -> f64 {
            self.iter().map(|z| z.norm()).fold(0.0, f64::max)
        }
    }
    impl AmaxNorm for DVector<C64> {
        fn amax_norm(&self) -> f64 {
            self.iter().map(|z| z.norm()).fold(0.0, f64::max)
        }
    }

    #[test]
    fn free_evolution_gives_zero_offset() {
        let spec = Family::Example1 { t_final: 1.3, s1: 1.0, s2: 2.0 }.build().unwrap();
        let grid = Grid::uniform(1.3, 7, (1.0, 2.0), 4).unwrap();
        let tt = transition_matrices(&spec, &grid, 1e-12).unwrap();
        let x0: Vec<_> = (0..4).map(|j| DVector::from_vec(vec![c(1.0 + j as f64), C64::new(0.0, -1.0)])).collect();
        let xf: Vec<_> = (0..4).map(|j| tt.at_final(j) * &x0[j]).collect();
        let xi = target_offset(&tt, &x0, &xf).unwrap();
        for v in &xi.values {
            assert!(v.amax_norm() < 1e-10);
        }
    }

    #[test]
    fn singular_function_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let op = random_op(&mut rng, 8, 5, 1, 1);
        let sing = singular_system(&op, DEFAULT_RANK_TOL).unwrap();
        let xi = TargetOffset::from_flat(1, &sing.right_functions[0]);
        let rep = picard_diagnostic(&sing, &xi, PicardThresholds::default()).unwrap();
        assert!((rep.coefficients[0].0 - 1.0).abs() < 1e-12 && rep.coefficients[0].1.abs() < 1e-12);
        for c in &rep.coefficients[1..] {
            assert!(c.0.abs() < 1e-12 && c.1.abs() < 1e-12);
        }
        assert!((rep.partial_sums[0] - 1.0 / sing.sigmas[0].powi(2)).abs() < 1e-10 * rep.partial_sums[0]);
        assert!(rep.range_residual < 1e-12);

        // ξ = σ_1 ν_1 is reached exactly by μ_1
        let xi = TargetOffset::from_flat(1, &(&sing.right_functions[0] * c(sing.sigmas[0])));
        let syn = synthesize_min_norm(&sing, &xi, 1e-12).unwrap();
        assert_eq!(syn.n_used, 1);
        assert!(syn.reached);
        let u = syn.control.to_flat();
        assert!((u - &sing.left_functions[0]).amax_norm() < 1e-12);
    }

    #[test]
    fn orthogonal_target_is_flagged_unreachable() {
        // rank-1 kernel: anything orthogonal to the constant is unreachable
        let op = constant_kernel_op(11, 9);
        let sing = singular_system(&op, DEFAULT_RANK_TOL).unwrap();
        let s = &op.grid.param_nodes;
        let xi = TargetOffset::new(s.iter().map(|x| DVector::from_element(1, c((std::f64::consts::PI * x).cos()))).collect())
            .unwrap();
        // cos(πs) is orthogonal to 1 under trapezoid weights on a symmetric grid
        let rep = picard_diagnostic(&sing, &xi, PicardThresholds::default()).unwrap();
        assert!((rep.range_residual - 1.0).abs() < 1e-12);
        assert!(!rep.range_condition_met);
        let syn = synthesize_min_norm(&sing, &xi, 1e-6).unwrap();
        assert!(!syn.reached);
    }

    #[test]
    fn illposedness_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let op = random_op(&mut rng, 10, 6, 1, 1);
        let sing = singular_system(&op, DEFAULT_RANK_TOL).unwrap();
        let xi = TargetOffset::new(vec![DVector::from_element(1, c(1.0)); 6]).unwrap();
        let r = illposedness_demo(&sing, &xi, 2, 0.0).unwrap();
        assert_eq!(r.xi_perturbation_norm, 0.0);
        assert_eq!(r.control_perturbation_norm, 0.0);
        assert_eq!(r.amplification, 1.0 / sing.sigmas[1]);
        assert!(illposedness_demo(&sing, &xi, 0, 1.0).is_err());
        assert!(illposedness_demo(&sing, &xi, sing.rank_cutoff + 1, 1.0).is_err());

        // unit singular value: both perturbations have norm |a|
        let one = constant_kernel_op(11, 5);
        let s1 = singular_system(&one, DEFAULT_RANK_TOL).unwrap();
        let xi = TargetOffset::new(vec![DVector::from_element(1, c(0.3)); 5]).unwrap();
        let r = illposedness_demo(&s1, &xi, 1, 0.7).unwrap();
        assert!((r.xi_perturbation_norm - 0.7).abs() < 1e-12);
        assert!((r.control_perturbation_norm - 0.7).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn adjoint_identity_holds(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let op = random_op(&mut rng, 7, 5, 2, 3);
            let u = DVector::from_fn(21, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
            let f = DVector::from_fn(10, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
            let pw = op.param_weights_flat();
            let tw = op.time_weights_flat();
            let lhs = weighted_inner(&f, &op.apply_flat(&u), &pw);
            let rhs = weighted_inner(&op.apply_adjoint_flat(&f), &u, &tw);
            prop_assert!((lhs - rhs).norm() <= 1e-12 * weighted_norm(&f, &pw) * weighted_norm(&u, &tw));
        }

        #[test]
        fn residual_nonincreasing_and_norm_nondecreasing(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let op = random_op(&mut rng, 9, 7, 1, 1);
            let sing = singular_system(&op, DEFAULT_RANK_TOL).unwrap();
            let xi = TargetOffset::new((0..7).map(|_| DVector::from_element(1, C64::new(rng.gen(), rng.gen()))).collect()).unwrap();
            let syn = synthesize_min_norm(&sing, &xi, 0.0).unwrap();
            for w in syn.residual_history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-14);
            }
            for w in syn.norm_history.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
        }
    }
}
