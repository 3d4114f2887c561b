//! Between-flash propagators W^t(f) and the operator chain L_n.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::grwf::model::GrwfModel;
use crate::grwf::space::{last_time, time_ordered, Flash};
use crate::opcore::{self, CMat, C64};
use crate::quad;

pub const DYSON_TOL: f64 = 1e-14;
pub const DYSON_MAX_TERMS: usize = 1000;
/// Longest panel of the piecewise Dyson expansion.
pub const MAX_PANEL: f64 = 0.5;
const PANEL_NODES: usize = 10;

/// Threshold on successive W*W differences for the long-time limit.
pub const LIMIT_TOL: f64 = 1e-8;
const LIMIT_MAX_DOUBLINGS: usize = 40;

struct PanelRule {
    nodes: Vec<f64>,
    /// Rows: the nodes followed by the right endpoint.
    integration: Vec<Vec<f64>>,
}

fn panel_rule() -> &'static PanelRule {
    static RULE: OnceLock<PanelRule> = OnceLock::new();
    RULE.get_or_init(|| {
        let (nodes, weights) = quad::gauss_legendre(PANEL_NODES);
        let targets: Vec<f64> = nodes.iter().copied().chain(std::iter::once(1.0)).collect();
        let integration = quad::integration_matrix(&nodes, &weights, &targets);
        PanelRule { nodes, integration }
    })
}

fn frobenius(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Time-ordered exponential of `generator` from s to t, by a Dyson series
/// summed on Gauss–Legendre collocation panels.
pub fn time_ordered_exp(
    generator: &dyn Fn(f64) -> CMat,
    dim: usize,
    s: f64,
    t: f64,
    tol: f64,
) -> Result<CMat> {
    if t < s {
        return Ok(CMat::zeros(dim, dim));
    }
    let rule = panel_rule();
    let p = rule.nodes.len();
    let mut w = opcore::identity(dim);
    let mut a = s;
    while a < t {
        let norm = frobenius(&generator(a)).max(1e-300);
        let mut b = a + MAX_PANEL.min(0.5 / norm);
        if b >= t || (t - b) < 1e-12 * (1.0 + t.abs()) {
            b = t;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let r: Vec<CMat> = rule
            .nodes
            .iter()
            .map(|x| generator(mid + half * x) * C64::from(half))
            .collect();
        let bound: f64 = r.iter().map(frobenius).fold(0.0, f64::max) * 2.0;
        let mut term: Vec<CMat> = vec![opcore::identity(dim); p];
        let mut panel = opcore::identity(dim);
        let mut factorial_bound = 1.0;
        let mut converged = false;
        for k in 1..=DYSON_MAX_TERMS {
            let rd: Vec<CMat> = r.iter().zip(&term).map(|(rm, dm)| rm * dm).collect();
            let mut next = Vec::with_capacity(p);
            for row in rule.integration.iter().take(p) {
                next.push(weighted_sum(row, &rd, dim));
            }
            let end = weighted_sum(&rule.integration[p], &rd, dim);
            let end_norm = opcore::max_abs(&end);
            panel += end;
            factorial_bound *= bound / k as f64;
            term = next;
            let term_norm = term.iter().map(opcore::max_abs).fold(end_norm, f64::max);
            if term_norm <= tol && factorial_bound <= tol.max(f64::EPSILON) * 1e2 {
                converged = true;
                break;
            }
            if term_norm == 0.0 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                what: "dyson series",
            });
        }
        w = panel * w;
        a = b;
    }
    Ok(w)
}

fn weighted_sum(coeffs: &[f64], mats: &[CMat], dim: usize) -> CMat {
    let mut acc = CMat::zeros(dim, dim);
    for (c, m) in coeffs.iter().zip(mats) {
        acc += m * C64::from(*c);
    }
    acc
}

/// W^t(f) started at time s: generator R_t = −½Λ(f, 𝒬, t) − iH(f, t).
/// Zero for t < s; matrix exponential when the generator does not depend on t.
pub fn dyson_propagator(
    model: &GrwfModel,
    history: &[Flash],
    s: f64,
    t: f64,
    tol: f64,
) -> Result<CMat> {
    if t < s {
        return Ok(CMat::zeros(model.dim, model.dim));
    }
    if t == s {
        return Ok(opcore::identity(model.dim));
    }
    if !model.is_time_dependent() {
        return Ok(opcore::matrix_exp(&model.generator(history, s), t - s));
    }
    time_ordered_exp(&|tau| model.generator(history, tau), model.dim, s, t, tol)
}

/// W^t(f_n) from the time of the last flash (or t0) to t.
pub fn propagator_from_last(model: &GrwfModel, history: &[Flash], t0: f64, t: f64) -> Result<CMat> {
    dyson_propagator(model, history, last_time(history, t0), t, DYSON_TOL)
}

/// L_n = C(f_n)·W^{t_n}(f_{n−1})·L_{n−1}, L_0 = I; zero unless t0 ≤ t1 ≤ ... ≤ tn.
pub fn ln_chain(model: &GrwfModel, history: &[Flash], t0: f64) -> Result<CMat> {
    if !time_ordered(history, t0) {
        return Ok(CMat::zeros(model.dim, model.dim));
    }
    let mut l = opcore::identity(model.dim);
    let mut prev = t0;
    for k in 0..history.len() {
        let past = &history[..k];
        let z = history[k];
        let w = dyson_propagator(model, past, prev, z.t, DYSON_TOL)?;
        l = model.collapse_op(past, z.q, z.t, z.label) * w * l;
        prev = z.t;
    }
    Ok(l)
}

/// ‖W^t(f_n) ψ_n‖².
pub fn survival(
    model: &GrwfModel,
    history: &[Flash],
    t0: f64,
    psi: &opcore::CVec,
    t: f64,
) -> Result<f64> {
    let w = propagator_from_last(model, history, t0, t)?;
    Ok(opcore::norm_sq(&(w * psi)))
}

/// Scale 1/λ_max of the no-flash decay at the start of the interval.
pub(crate) fn rate_scale(model: &GrwfModel, history: &[Flash], t: f64) -> f64 {
    let lmax = opcore::max_eigenvalue(&model.total_rate(history, t));
    if lmax > 1e-12 {
        lmax
    } else {
        1.0
    }
}

/// lim_{t→∞} W^t(f)*W^t(f), evaluated on doubling horizons until successive
/// values differ by less than `LIMIT_TOL`.
pub fn limit_wstar_w(model: &GrwfModel, history: &[Flash], t0: f64) -> Result<CMat> {
    let start = last_time(history, t0);
    let tau0 = 1.0 / rate_scale(model, history, start);
    let constant = !model.is_time_dependent();
    let r = model.generator(history, start);
    let mut w = if constant {
        opcore::matrix_exp(&r, tau0)
    } else {
        dyson_propagator(model, history, start, start + tau0, DYSON_TOL)?
    };
    let mut prev = w.adjoint() * &w;
    let mut tau = tau0;
    for _ in 0..LIMIT_MAX_DOUBLINGS {
        w = if constant {
            &w * &w
        } else {
            dyson_propagator(model, history, start + tau, start + 2.0 * tau, DYSON_TOL)? * &w
        };
        tau *= 2.0;
        let cur = w.adjoint() * &w;
        if opcore::max_abs_diff(&cur, &prev) < LIMIT_TOL {
            return Ok(opcore::hermitian_part(&cur));
        }
        prev = cur;
    }
    Err(Error::NonConvergence {
        what: "long-time limit of W*W",
    })
}

/// ⟨ψ_n| lim W*W |ψ_n⟩: probability that no further flash occurs.
pub fn stop_probability(
    model: &GrwfModel,
    history: &[Flash],
    t0: f64,
    psi: &opcore::CVec,
) -> Result<f64> {
    let limit = limit_wstar_w(model, history, t0)?;
    Ok(opcore::expectation(&limit, psi).clamp(0.0, 1.0))
}
