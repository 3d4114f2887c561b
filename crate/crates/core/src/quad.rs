//! Gauss–Legendre rules and spectral integration matrices.

use std::f64::consts::PI;

/// Nodes and weights on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = -(PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// P_n(x) and P_n'(x).
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (p, prev) = legendre_pair(n, x);
    let dp = n as f64 * (x * p - prev) / (x * x - 1.0);
    (p, dp)
}

/// (P_n(x), P_{n-1}(x)); P_{-1} is taken as 0.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p1 = x;
    for k in 1..n {
        let k = k as f64;
        let p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

fn legendre_all(n_max: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; n_max + 1];
    p[0] = 1.0;
    if n_max >= 1 {
        p[1] = x;
    }
    for k in 1..n_max {
        let kf = k as f64;
        p[k + 1] = ((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0);
    }
    p
}

/// Rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|xi| mid + half * xi).collect(),
        w.iter().map(|wi| half * wi).collect(),
    )
}

/// Row j, column m: ∫_{-1}^{y_j} l_m(x) dx for the Lagrange basis on the Gauss nodes,
/// evaluated at the targets `y`.
pub fn integration_matrix(nodes: &[f64], weights: &[f64], targets: &[f64]) -> Vec<Vec<f64>> {
    let p = nodes.len();
    let node_polys: Vec<Vec<f64>> = nodes.iter().map(|&x| legendre_all(p, x)).collect();
    let target_integrals: Vec<Vec<f64>> = targets
        .iter()
        .map(|&y| {
            let pl = legendre_all(p, y);
            (0..p)
                .map(|k| {
                    if k == 0 {
                        y + 1.0
                    } else {
                        (pl[k + 1] - pl[k - 1]) / (2.0 * k as f64 + 1.0)
                    }
                })
                .collect()
        })
        .collect();
    target_integrals
        .iter()
        .map(|ik| {
            (0..p)
                .map(|m| {
                    (0..p)
                        .map(|k| {
                            0.5 * (2.0 * k as f64 + 1.0) * weights[m] * node_polys[m][k] * ik[k]
                        })
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Composite rule on [a, b]: `panels` geometric panels growing by `ratio`, `per_panel` nodes each.
pub fn geometric_composite(
    a: f64,
    b: f64,
    panels: usize,
    per_panel: usize,
    ratio: f64,
) -> (Vec<f64>, Vec<f64>) {
    let total: f64 = (0..panels).map(|k| ratio.powi(k as i32)).sum();
    let mut left = a;
    let mut nodes = Vec::with_capacity(panels * per_panel);
    let mut weights = Vec::with_capacity(panels * per_panel);
    for k in 0..panels {
        let right = if k + 1 == panels {
            b
        } else {
            left + (b - a) * ratio.powi(k as i32) / total
        };
        let (x, w) = gauss_legendre_on(per_panel, left, right);
        nodes.extend(x);
        weights.extend(w);
        left = right;
    }
    (nodes, weights)
}
