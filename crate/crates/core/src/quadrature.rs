//! Quadrature rules and the closed-form Fourier transforms of hat functions.

use num_complex::Complex64 as C64;

/// `n` points spaced evenly on `[a, b]`, endpoints included.
///
/// Node `j` is computed as the midpoint plus a symmetric offset so that grids
/// centred on zero are exactly antisymmetric (`x[j] == -x[n-1-j]`).
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "linspace needs at least two points");
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let d = (n - 1) as f64;
    (0..n)
        .map(|j| {
            if j == 0 {
                a
            } else if j == n - 1 {
                b
            } else {
                mid + half * ((2 * j) as f64 - d) / d
            }
        })
        .collect()
}

/// Trapezoid weights for arbitrary increasing nodes.
pub fn trapezoid_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let h = 0.5 * (nodes[i + 1] - nodes[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Composite Gauss-Legendre rule on `[a, b]` with `panels` equal panels of
/// `order` points each.
pub fn composite_gauss_legendre(a: f64, b: f64, panels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut xs = Vec::with_capacity(panels * order);
    let mut ws = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + h * p as f64;
        let c = lo + 0.5 * h;
        for (x, w) in gx.iter().zip(&gw) {
            xs.push(c + 0.5 * h * x);
            ws.push(0.5 * h * w);
        }
    }
    (xs, ws)
}

/// `F(a) = ∫_0^1 e^{-i a s} (1 - s) ds`, the transform of a half hat of unit width.
fn half_hat(a: f64) -> C64 {
    if a.abs() < 0.5 {
        // Σ (-i a)^k / (k+2)!
        let mut term = C64::new(0.5, 0.0);
        let mut sum = term;
        let step = C64::new(0.0, -a);
        for k in 1..30 {
            term = term * step / (k as f64 + 2.0);
            sum += term;
            if term.norm() < 1e-18 {
                break;
            }
        }
        sum
    } else {
        let ia = C64::new(0.0, a);
        let e = C64::new(0.0, -a).exp();
        C64::new(1.0, 0.0) / ia + (C64::new(1.0, 0.0) - e) / (a * a)
    }
}

/// `∫ e^{-iωτ} φ_i(τ) dτ` for the piecewise-linear hat functions `φ_i` on
/// `nodes` (half hats at the two ends). Exact up to rounding.
pub fn hat_transforms(nodes: &[f64], omega: f64) -> Vec<C64> {
    let n = nodes.len();
    let mut out = vec![C64::new(0.0, 0.0); n];
    for i in 0..n {
        let mut acc = C64::new(0.0, 0.0);
        if i > 0 {
            let dl = nodes[i] - nodes[i - 1];
            acc += dl * half_hat(-omega * dl);
        }
        if i + 1 < n {
            let dr = nodes[i + 1] - nodes[i];
            acc += dr * half_hat(omega * dr);
        }
        out[i] = acc * C64::new(0.0, -omega * nodes[i]).exp();
    }
    out
}
