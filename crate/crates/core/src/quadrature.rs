//! Gauss rules used to integrate test functions against parametric jump laws.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Nodes and weights on [0, 1] (Legendre, shifted).
pub(crate) fn legendre_unit() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(64))
}

/// Nodes and weights for `∫_0^∞ e^{-x} g(x) dx`.
pub(crate) fn laguerre() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| gauss_laguerre(40))
}

fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_eval(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre_eval(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out
}

fn legendre_eval(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn gauss_laguerre(n: usize) -> Vec<(f64, f64)> {
    let nf = n as f64;
    let mut nodes: Vec<f64> = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = match i {
            0 => 3.0 / (1.0 + 2.4 * nf),
            1 => nodes[0] + 15.0 / (1.0 + 2.5 * nf),
            _ => {
                let ai = (i - 1) as f64;
                nodes[i - 1] + (1.0 + 2.55 * ai) / (1.9 * ai) * (nodes[i - 1] - nodes[i - 2])
            }
        };
        let mut pp = 0.0;
        let mut p_prev = 0.0;
        for _ in 0..200 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j as f64 + 1.0 - x) * p2 - j as f64 * p3) / (j as f64 + 1.0);
            }
            pp = nf * (p1 - p2) / x;
            p_prev = p2;
            let dx = p1 / pp;
            x -= dx;
            if dx.abs() <= 1e-14 * x.abs().max(1.0) {
                break;
            }
        }
        nodes.push(x);
        out.push((x, -1.0 / (pp * nf * p_prev)));
    }
    out
}
