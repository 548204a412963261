//! Gauss–Legendre quadrature: fixed panels and adaptive bisection.

use std::sync::OnceLock;

/// Order of the rule used by [`integrate_adaptive`] and [`integrate_panels`].
pub const PANEL_ORDER: usize = 20;

const MAX_DEPTH: u32 = 40;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
///
/// Nodes are the roots of P_n found by Newton iteration from the Chebyshev
/// guess; weights follow from P_n'.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

fn panel_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(PANEL_ORDER))
}

fn panel<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> f64 {
    let (nodes, weights) = panel_rule();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    nodes
        .iter()
        .zip(weights)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Integrates `f` over `[a, b]` split into `n_panels` equal Gauss–Legendre panels.
pub fn integrate_panels<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n_panels: usize) -> f64 {
    let n_panels = n_panels.max(1);
    let h = (b - a) / n_panels as f64;
    (0..n_panels)
        .map(|i| {
            let lo = a + i as f64 * h;
            let hi = if i + 1 == n_panels { b } else { lo + h };
            panel(&mut f, lo, hi)
        })
        .sum()
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error_estimate: f64,
}

/// Adaptive bisection on Gauss–Legendre panels.
///
/// A panel is accepted when its one-panel and two-half-panel estimates differ
/// by less than its share of `rel_tol·|I| + abs_tol`, with `|I|` taken from a
/// coarse first pass over `initial_panels` panels.
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    initial_panels: usize,
) -> Integral {
    if a == b {
        return Integral {
            value: 0.0,
            error_estimate: 0.0,
        };
    }
    let n0 = initial_panels.max(1);
    let h = (b - a) / n0 as f64;
    let coarse: Vec<(f64, f64, f64)> = (0..n0)
        .map(|i| {
            let lo = a + i as f64 * h;
            let hi = if i + 1 == n0 { b } else { lo + h };
            (lo, hi, panel(&mut f, lo, hi))
        })
        .collect();
    let scale = coarse.iter().map(|c| c.2.abs()).sum::<f64>();
    let tol = rel_tol * scale + abs_tol;
    let width = (b - a).abs();

    let mut value = 0.0;
    let mut error = 0.0;
    let mut stack: Vec<(f64, f64, f64, u32)> = coarse.into_iter().rev().map(|(lo, hi, v)| (lo, hi, v, 0)).collect();
    while let Some((lo, hi, whole, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = panel(&mut f, lo, mid);
        let right = panel(&mut f, mid, hi);
        let diff = (left + right - whole).abs();
        let share = tol * (hi - lo).abs() / width;
        if diff <= share || depth >= MAX_DEPTH {
            value += left + right;
            error += diff;
        } else {
            stack.push((mid, hi, right, depth + 1));
            stack.push((lo, mid, left, depth + 1));
        }
    }
    Integral {
        value,
        error_estimate: error,
    }
}
