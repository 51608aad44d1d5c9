//! Discrete prolate spheroidal sequences.
//!
//! Eigenvectors come from the tridiagonal matrix that commutes with the sinc
//! matrix (well separated spectrum, O(N) per vector). Eigenvalues are the
//! in-band energy `κ = ∫_{-W}^{W} |V(f)|² df` of each sequence, which keeps
//! relative accuracy far below `1e-16`, where a dense solve only returns noise.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{EnsembleError, Result};
use crate::quadrature::composite_gauss_legendre;

/// Sequences whose concentration falls below this are dropped by default.
pub const DEFAULT_KAPPA_FLOOR: f64 = 1e-22;

fn check_params(n: usize, w: f64) -> Result<()> {
    if n < 2 {
        return Err(EnsembleError::param(format!("sequence length must be at least 2, got {n}")));
    }
    if !(w > 0.0 && w < 0.5) {
        return Err(EnsembleError::param(format!("half-bandwidth must satisfy 0 < W < 1/2, got {w}")));
    }
    Ok(())
}

/// `A[t,t'] = sin(2πW(t−t')) / (π(t−t'))`, diagonal `2W`.
pub fn sinc_matrix(n: usize, w: f64) -> Result<DMatrix<f64>> {
    check_params(n, w)?;
    let row: Vec<f64> = (0..n)
        .map(|d| if d == 0 { 2.0 * w } else { (2.0 * PI * w * d as f64).sin() / (PI * d as f64) })
        .collect();
    Ok(DMatrix::from_fn(n, n, |i, j| row[i.abs_diff(j)]))
}

/// All eigenvalues of the sinc matrix by a dense symmetric solver, descending.
/// Absolute accuracy only; used as a cross-check.
pub fn sinc_eigenvalues_dense(n: usize, w: f64) -> Result<Vec<f64>> {
    let a = sinc_matrix(n, w)?;
    let mut ev: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(ev)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpheroidalBasis {
    pub n: usize,
    pub w: f64,
    /// Unit-norm sequences, most concentrated first.
    pub sequences: Vec<Vec<f64>>,
    /// Concentrations, strictly decreasing.
    pub kappas: Vec<f64>,
    /// True when fewer sequences than requested were kept because the
    /// concentration dropped below the floor or lost strict ordering.
    pub truncated: bool,
}

impl SpheroidalBasis {
    pub fn len(&self) -> usize {
        self.kappas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappas.is_empty()
    }

    /// `λ_n = 2π κ_n`.
    pub fn lambdas(&self) -> Vec<f64> {
        self.kappas.iter().map(|k| 2.0 * PI * k).collect()
    }
}

struct Tridiagonal {
    diag: Vec<f64>,
    /// `off[i]` couples `i` and `i+1`.
    off: Vec<f64>,
}

impl Tridiagonal {
    fn commuting(n: usize, w: f64) -> Self {
        let cw = (2.0 * PI * w).cos();
        let nf = n as f64;
        let diag = (0..n).map(|t| (0.5 * (nf - 1.0 - 2.0 * t as f64)).powi(2) * cw).collect();
        let off = (1..n).map(|t| 0.5 * t as f64 * (nf - t as f64)).collect();
        Tridiagonal { diag, off }
    }

    /// Number of eigenvalues strictly below `x`.
    fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut q = self.diag[0] - x;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.diag.len() {
            let denom = if q == 0.0 { f64::MIN_POSITIVE.sqrt() } else { q };
            q = self.diag[i] - x - self.off[i - 1] * self.off[i - 1] / denom;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.diag.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 } + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// The `idx`-th smallest eigenvalue by bisection on the Sturm count.
    fn eigenvalue(&self, idx: usize, bounds: (f64, f64)) -> f64 {
        let (mut lo, mut hi) = bounds;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > idx {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Inverse iteration for the eigenvector at `lambda`, using Gaussian
    /// elimination with partial pivoting on the shifted tridiagonal.
    fn eigenvector(&self, lambda: f64) -> Vec<f64> {
        let n = self.diag.len();
        let scale = self.diag.iter().map(|d| d.abs()).fold(1.0, f64::max);
        // factor (T - λI) = P L U with U having two superdiagonals
        let mut d: Vec<f64> = self.diag.iter().map(|x| x - lambda).collect();
        let mut du: Vec<f64> = self.off.clone();
        let mut dl: Vec<f64> = self.off.clone();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut mult = vec![0.0; n.saturating_sub(1)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n - 1 {
            if d[i].abs() >= dl[i].abs() {
                let piv = if d[i] == 0.0 { f64::EPSILON * scale } else { d[i] };
                d[i] = piv;
                let f = dl[i] / piv;
                mult[i] = f;
                d[i + 1] -= f * du[i];
            } else {
                let f = d[i] / dl[i];
                mult[i] = f;
                d[i] = dl[i];
                let tmp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = tmp - f * d[i + 1];
                if i + 1 < n - 1 {
                    du2[i] = du[i + 1];
                    du[i + 1] *= -f;
                }
                swapped[i] = true;
            }
            dl[i] = 0.0;
        }
        if d[n - 1] == 0.0 {
            d[n - 1] = f64::EPSILON * scale;
        }
        let solve = |b: &mut Vec<f64>| {
            for i in 0..n - 1 {
                if swapped[i] {
                    b.swap(i, i + 1);
                }
                b[i + 1] -= mult[i] * b[i];
            }
            b[n - 1] /= d[n - 1];
            if n >= 2 {
                b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
            }
            for i in (0..n.saturating_sub(2)).rev() {
                b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / d[i];
            }
        };
        // deterministic start with no special symmetry
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.37 * ((i as f64 * 0.7548776662).fract() - 0.5)).collect();
        for _ in 0..4 {
            solve(&mut x);
            let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in x.iter_mut() {
                *v /= nrm;
            }
        }
        x
    }
}

/// Positive mean, or when the mean is negligible, a positive first significant entry.
fn fix_sign(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let flip = if mean.abs() >= 1e-12 {
        mean < 0.0
    } else {
        let vmax = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
        v.iter().find(|x| x.abs() > 1e-6 * vmax).is_some_and(|x| *x < 0.0)
    };
    if flip {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// `2∫_0^W |Σ_t v_t e^{-i2πf(t-c)}|² df` for several sequences at once, with
/// `c` the centre index. Composite Gauss-Legendre in `f`; the phase factors
/// are generated by a rotation recurrence re-seeded every 64 terms.
fn concentrations(seqs: &[Vec<f64>], n: usize, w: f64) -> Vec<f64> {
    let panels = ((n - 1) as f64 * w).ceil() as usize + 1;
    let (fs, ws) = composite_gauss_legendre(0.0, w, panels, 16);
    let centre = 0.5 * (n - 1) as f64;
    let mut acc = vec![0.0; seqs.len()];
    let mut cs = vec![0.0; n];
    let mut sn = vec![0.0; n];
    for (f, wt) in fs.iter().zip(&ws) {
        let theta = 2.0 * PI * f;
        let rot = C64::new(theta.cos(), -theta.sin());
        let mut z = C64::new(0.0, 0.0);
        for t in 0..n {
            if t % 64 == 0 {
                let ph = -theta * (t as f64 - centre);
                z = C64::new(ph.cos(), ph.sin());
            } else {
                z *= rot;
            }
            cs[t] = z.re;
            sn[t] = z.im;
        }
        for (k, v) in seqs.iter().enumerate() {
            let mut re = 0.0;
            let mut im = 0.0;
            for t in 0..n {
                re += v[t] * cs[t];
                im += v[t] * sn[t];
            }
            acc[k] += wt * (re * re + im * im);
        }
    }
    acc.iter().map(|a| 2.0 * a).collect()
}

/// The `k_max` most concentrated sequences of length `n` and half-bandwidth
/// `w` (all with concentration above `DEFAULT_KAPPA_FLOOR` when `k_max` is
/// `None`).
pub fn dpss(n: usize, w: f64, k_max: Option<usize>) -> Result<SpheroidalBasis> {
    dpss_with_floor(n, w, k_max, DEFAULT_KAPPA_FLOOR)
}

pub fn dpss_with_floor(n: usize, w: f64, k_max: Option<usize>, kappa_floor: f64) -> Result<SpheroidalBasis> {
    check_params(n, w)?;
    if let Some(k) = k_max {
        if k > n {
            return Err(EnsembleError::param(format!("k_max = {k} exceeds the sequence length {n}")));
        }
    }
    let want = k_max.unwrap_or(n);
    let tri = Tridiagonal::commuting(n, w);
    let bounds = tri.gershgorin();
    let mut sequences: Vec<Vec<f64>> = Vec::new();
    let mut kappas: Vec<f64> = Vec::new();
    let mut truncated = false;
    // work in batches so the default (floor-limited) call does not build all n vectors
    let batch = 16;
    let mut k = 0;
    'outer: while k < want {
        let hi = (k + batch).min(want);
        let mut vecs = Vec::with_capacity(hi - k);
        for kk in k..hi {
            let lam = tri.eigenvalue(n - 1 - kk, bounds);
            let mut v = tri.eigenvector(lam);
            fix_sign(&mut v);
            vecs.push(v);
        }
        let ks = concentrations(&vecs, n, w);
        for (v, kap) in vecs.into_iter().zip(ks) {
            let ordered = kappas.last().is_none_or(|prev| kap < *prev);
            let in_tail = kap < 0.5;
            if in_tail && (!ordered || kap <= kappa_floor) {
                truncated = k_max.is_some();
                break 'outer;
            }
            if !kap.is_finite() {
                return Err(EnsembleError::numerical("concentration integral is not finite"));
            }
            sequences.push(v);
            kappas.push(kap);
        }
        k = hi;
    }
    Ok(SpheroidalBasis { n, w, sequences, kappas, truncated })
}

/// `‖A v − κ v‖₂` for every sequence, against the dense sinc matrix.
pub fn eigen_residuals(basis: &SpheroidalBasis) -> Result<Vec<f64>> {
    let a = sinc_matrix(basis.n, basis.w)?;
    Ok(basis
        .sequences
        .iter()
        .zip(&basis.kappas)
        .map(|(v, k)| {
            let v = DVector::from_column_slice(v);
            (&a * &v - &v * *k).norm()
        })
        .collect())
}

/// The phase-twisted basis on the frequency grid.
#[derive(Debug, Clone)]
pub struct ContinuousBasis {
    pub beta: f64,
    pub t_final: f64,
    /// `c = βT/2`.
    pub c: f64,
    pub freq_nodes: Vec<f64>,
    /// Uniform frequency weight `Δω = 2β/(N−1)` used in the inner product.
    pub weight: f64,
    /// `e^{-iω_j T/2}`.
    pub phases: Vec<C64>,
    /// `φ̃_n(ω_j)`, unit norm in the `Δω`-weighted inner product.
    pub phi_tilde: Vec<Vec<C64>>,
    /// `λ_n = 2π κ_n`.
    pub lambdas: Vec<f64>,
}

impl ContinuousBasis {
    pub fn inner(&self, a: &[C64], b: &[C64]) -> C64 {
        a.iter().zip(b).map(|(x, y)| x * y.conj()).sum::<C64>() * self.weight
    }

    pub fn norm(&self, a: &[C64]) -> f64 {
        (a.iter().map(|x| x.norm_sqr()).sum::<f64>() * self.weight).sqrt()
    }
}

/// `φ̃_n(ω_j) = e^{-iω_j T/2} ψ_n(ω_j)/‖ψ_n‖` and `λ_n = 2πκ_n`, with `ψ_n`
/// the sequences placed on uniform nodes `ω_j = −β + 2βj/(N−1)`.
pub fn continuous_basis(basis: &SpheroidalBasis, beta: f64, t_final: f64, freq_nodes: &[f64]) -> Result<ContinuousBasis> {
    let n = basis.n;
    if freq_nodes.len() != n {
        return Err(EnsembleError::param(format!(
            "{} frequency nodes for sequences of length {n}",
            freq_nodes.len()
        )));
    }
    if !(beta > 0.0) || t_final < 0.0 {
        return Err(EnsembleError::param("need beta > 0 and T >= 0"));
    }
    let dw = 2.0 * beta / (n - 1) as f64;
    for (j, w) in freq_nodes.iter().enumerate() {
        let expect = -beta + dw * j as f64;
        if (w - expect).abs() > 1e-9 * beta {
            return Err(EnsembleError::param("frequency nodes must be uniform on [-beta, beta]"));
        }
    }
    if t_final > 0.0 {
        let w_expected = t_final * beta / (2.0 * PI * (n - 1) as f64);
        if (basis.w - w_expected).abs() > 1e-12 * w_expected {
            return Err(EnsembleError::param(format!(
                "sequences were built with W = {}, but T·β/(2π(N−1)) = {w_expected}",
                basis.w
            )));
        }
    }
    let phases: Vec<C64> = freq_nodes.iter().map(|w| C64::new(0.0, -w * t_final / 2.0).exp()).collect();
    let s = 1.0 / dw.sqrt();
    let phi_tilde = basis
        .sequences
        .iter()
        .map(|v| v.iter().zip(&phases).map(|(x, p)| p * (x * s)).collect())
        .collect();
    Ok(ContinuousBasis {
        beta,
        t_final,
        c: beta * t_final / 2.0,
        freq_nodes: freq_nodes.to_vec(),
        weight: dw,
        phases,
        phi_tilde,
        lambdas: basis.lambdas(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::linspace;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_formula() {
        let a = sinc_matrix(2, 0.25).unwrap();
        assert_eq!(a[(0, 0)], 0.5);
        assert!((a[(0, 1)] - 1.0 / PI).abs() < 1e-16);
        assert_eq!(a[(0, 1)], a[(1, 0)]);
    }

    #[test]
    fn rejects_half_bandwidth_at_nyquist() {
        assert!(matches!(sinc_matrix(4, 0.5), Err(EnsembleError::Parameter(_))));
        assert!(dpss(4, 0.0, None).is_err());
        assert!(dpss(4, 0.1, Some(5)).is_err());
    }

    #[test]
    fn eight_by_eight_spectrum_in_unit_interval() {
        let ev = sinc_eigenvalues_dense(8, 0.2).unwrap();
        assert!(ev.iter().all(|k| *k > 0.0 && *k < 1.0));
    }

    #[test]
    fn three_point_sequences_match_cubic_roots() {
        let w = 0.1;
        let a = sinc_matrix(3, w).unwrap();
        // symmetric Toeplitz 3x3: [[d, p, q], [p, d, p], [q, p, d]]
        let (d, p, q) = (a[(0, 0)], a[(0, 1)], a[(0, 2)]);
        // antisymmetric vector (1, 0, -1)/√2 has eigenvalue d - q; the
        // symmetric block [[d+q, √2 p], [√2 p, d]] gives the other two.
        let tr = 2.0 * d + q;
        let det = (d + q) * d - 2.0 * p * p;
        let disc = (tr * tr - 4.0 * det).sqrt();
        let mut expect = [0.5 * (tr + disc), 0.5 * (tr - disc), d - q];
        expect.sort_by(|a, b| b.total_cmp(a));
        let basis = dpss(3, w, Some(3)).unwrap();
        assert_eq!(basis.len(), 3);
        for (k, e) in basis.kappas.iter().zip(expect) {
            assert!((k - e).abs() < 1e-10, "{k} vs {e}");
        }
        // symmetric top vector (a, b, a): the first row gives b/a = (λ - d - q)/p
        let s = &basis.sequences[0];
        assert!((s[0] - s[2]).abs() < 1e-12);
        assert!((s[1] / s[0] - (expect[0] - d - q) / p).abs() < 1e-10);
        // the middle sequence is the antisymmetric one, (1, 0, -1)/√2
        assert!((basis.kappas[1] - (d - q)).abs() < 1e-10);
        let s2 = &basis.sequences[1];
        assert!(s2[1].abs() < 1e-12 && (s2[0] + s2[2]).abs() < 1e-12);
    }

    #[test]
    fn sign_convention_fixed() {
        let b = dpss(32, 0.1, Some(6)).unwrap();
        for v in &b.sequences {
            let mean: f64 = v.iter().sum::<f64>() / 32.0;
            if mean.abs() >= 1e-12 {
                assert!(mean > 0.0);
            } else {
                let vmax = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
                let first = v.iter().find(|x| x.abs() > 1e-6 * vmax).unwrap();
                assert!(*first > 0.0);
            }
        }
    }

    #[test]
    fn tail_concentrations_match_reference_values() {
        // N = 1001, W = 10/(2π·1000); reference values from 50-digit arithmetic.
        let reference: [f64; 16] = [
            0.999358459534,
            0.980022297008,
            0.800978471556,
            0.34503861695,
            0.0564553211437,
            4.22639246629e-3,
            1.95784218572e-4,
            6.45372206359e-6,
            1.60901489968e-7,
            3.15005081329e-9,
            4.97725978585e-11,
            6.48455465773e-13,
            7.08792511438e-15,
            6.59411370148e-17,
            5.28533411408e-19,
            3.68802454981e-21,
        ];
        let w = 10.0 / (2.0 * PI * 1000.0);
        let b = dpss(1001, w, None).unwrap();
        assert!(b.len() >= reference.len());
        for (k, r) in b.kappas.iter().zip(reference) {
            // twelve-digit references; deep in the tail the error is set by an
            // absolute ~1e-16 error in the transform, i.e. relative 1e-16/√κ
            let tol = f64::max(1e-9, 1e-16 / r.sqrt());
            assert!((k - r).abs() <= tol * r, "{k} vs {r}");
        }
    }

    #[test]
    fn phases_trivial_at_zero_horizon() {
        let b = dpss(16, 0.1, Some(4)).unwrap();
        let nodes = linspace(-2.0, 2.0, 16);
        let cb = continuous_basis(&b, 2.0, 0.0, &nodes).unwrap();
        assert!(cb.phases.iter().all(|p| *p == C64::new(1.0, 0.0)));
        for phi in &cb.phi_tilde {
            assert!(phi.iter().all(|z| z.im == 0.0));
        }
    }

    #[test]
    fn continuous_basis_is_orthonormal() {
        let (n, beta, t) = (201, 10.0, 1.0);
        let w = t * beta / (2.0 * PI * (n - 1) as f64);
        let b = dpss(n, w, Some(10)).unwrap();
        let cb = continuous_basis(&b, beta, t, &linspace(-beta, beta, n)).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((cb.inner(&cb.phi_tilde[i], &cb.phi_tilde[j]) - C64::new(e, 0.0)).norm() < 1e-8);
            }
        }
        // wrong W is rejected
        let bad = dpss(n, 1.5 * w, Some(3)).unwrap();
        assert!(continuous_basis(&bad, beta, t, &linspace(-beta, beta, n)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn sinc_matrix_is_symmetric_toeplitz(n in 2usize..40, w in 0.01f64..0.49) {
            let a = sinc_matrix(n, w).unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(a[(i, j)], a[(j, i)]);
                    if i + 1 < n && j + 1 < n {
                        prop_assert_eq!(a[(i, j)], a[(i + 1, j + 1)]);
                    }
                }
            }
        }

        #[test]
        fn sequences_are_even_or_odd(n in 4usize..200, w in 0.01f64..0.3) {
            let b = dpss(n, w, Some(n.min(8))).unwrap();
            for (k, v) in b.sequences.iter().enumerate() {
                let parity = if k % 2 == 0 { 1.0 } else { -1.0 };
                for t in 0..n {
                    prop_assert!((v[t] - parity * v[n - 1 - t]).abs() < 1e-8);
                }
            }
        }

        #[test]
        fn residuals_and_ordering(n in 4usize..160, frac in 0.05f64..1.0) {
            // keep N·W ≤ 3 so the leading concentration is distinguishable from 1 in f64
            let w = (3.0 * frac / n as f64).min(0.45);
            let b = dpss(n, w, None).unwrap();
            let res = eigen_residuals(&b).unwrap();
            prop_assert!(res.iter().all(|r| *r <= 1e-8));
            for pair in b.kappas.windows(2) {
                prop_assert!(pair[1] < pair[0]);
            }
            prop_assert!(b.kappas.iter().all(|k| *k > 0.0 && *k < 1.0));
        }
    }
}
