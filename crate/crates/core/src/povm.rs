//! History densities E_n = L_n*L_n, their normalization and consistency, and
//! the POVMs of experiments that read out a function of the flash history.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grwf::model::GrwfModel;
use crate::grwf::propagator::{dyson_propagator, ln_chain, rate_scale, DYSON_TOL};
use crate::grwf::space::{last_time, time_ordered, Flash};
use crate::opcore::{self, CMat, CVec, C64};
use crate::quad;

/// Largest number of integrand evaluations a nested quadrature may use.
pub const EVALUATION_BUDGET: usize = 4_000_000;

pub type DensityFn = dyn Fn(&[Flash]) -> Result<CMat> + Send + Sync;

/// E_n as a function of n-flash histories.
#[derive(Clone)]
pub struct HistoryDensity {
    pub n: usize,
    pub t0: f64,
    pub model: Arc<GrwfModel>,
    evaluator: Arc<DensityFn>,
}

impl HistoryDensity {
    /// Replaces the evaluator while keeping the model used for horizons and tails.
    pub fn with_evaluator(mut self, evaluator: Arc<DensityFn>) -> Self {
        self.evaluator = evaluator;
        self
    }

    /// E_n(f); zero on histories that are not strictly time-ordered after t0.
    pub fn eval(&self, history: &[Flash]) -> Result<CMat> {
        if history.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: history.len(),
            });
        }
        if !time_ordered(history, self.t0) {
            return Ok(CMat::zeros(self.model.dim, self.model.dim));
        }
        (self.evaluator)(history)
    }
}

pub fn density_from_model(model: &GrwfModel, n: usize, t0: f64) -> HistoryDensity {
    let m = Arc::new(model.clone());
    let me = m.clone();
    HistoryDensity {
        n,
        t0,
        model: m,
        evaluator: Arc::new(move |f| {
            let l = ln_chain(&me, f, t0)?;
            Ok(opcore::hermitian_part(&(l.adjoint() * l)))
        }),
    }
}

/// Composite Gauss–Legendre rule on the window [t_n, t_n + horizon/λ_max]
/// after each flash; beyond the window the exact identity
/// ∫_{t_h}^∞ W*Λ(𝒬)W = W*W(t_h) − lim W*W supplies the tail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    pub panels: usize,
    pub per_panel: usize,
    /// Window length in units of 1/λ_max.
    pub horizon: f64,
}

impl Quadrature {
    /// Refinement level ℓ ≥ 1: one panel of 4ℓ nodes over a window of 6/λ_max.
    pub fn level(level: usize) -> Self {
        Self {
            panels: 1,
            per_panel: 4 * level.max(1),
            horizon: 6.0,
        }
    }

    pub fn nodes(&self) -> usize {
        self.panels * self.per_panel
    }

    fn rule(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        quad::geometric_composite(a, b, self.panels, self.per_panel, 1.0)
    }

    fn window(&self, model: &GrwfModel, history: &[Flash], t_n: f64) -> f64 {
        t_n + self.horizon / rate_scale(model, history, t_n)
    }
}

/// W^{t_j}(f) at ascending times, built by chaining the propagator between consecutive nodes.
fn propagators_at(
    model: &GrwfModel,
    history: &[Flash],
    start: f64,
    times: &[f64],
) -> Result<Vec<CMat>> {
    let mut out = Vec::with_capacity(times.len());
    let mut w = opcore::identity(model.dim);
    let mut prev = start;
    for &t in times {
        w = dyson_propagator(model, history, prev, t, DYSON_TOL)? * w;
        out.push(w.clone());
        prev = t;
    }
    Ok(out)
}

fn check_budget(quadrature: &Quadrature, cells: usize, depth: usize) -> Result<()> {
    let per_level = quadrature.nodes() * cells;
    let total = (0..depth).try_fold(1usize, |acc, _| acc.checked_mul(per_level));
    match total {
        Some(t) if t <= EVALUATION_BUDGET => Ok(()),
        _ => Err(Error::QuadratureBudget {
            nodes: per_level.saturating_pow(depth as u32),
            budget: EVALUATION_BUDGET,
        }),
    }
}

#[derive(Clone, Debug)]
pub struct NormalizationReport {
    pub n: usize,
    pub quadrature: Quadrature,
    /// Σ_{k<n} ∫ L_k*(lim W*W)L_k + ∫ L_n*L_n.
    pub total: CMat,
    /// ‖total − I‖_max.
    pub deviation: f64,
}

/// Σ_{k<n} ∫_{Ω_k} L_k*(lim W*W)L_k + ∫_{Ω_n} L_n*L_n over the whole history space, which
/// equals I; each stopping term is merged with the tail of the next level's integral.
pub fn check_normalization(
    model: &GrwfModel,
    n: usize,
    quadrature: Quadrature,
    t0: f64,
) -> Result<NormalizationReport> {
    check_budget(&quadrature, model.space.n_cells(), n)?;
    let total = nested_normalization(model, &[], &opcore::identity(model.dim), n, &quadrature, t0)?;
    let deviation = opcore::max_abs_diff(&total, &opcore::identity(model.dim));
    Ok(NormalizationReport {
        n,
        quadrature,
        total,
        deviation,
    })
}

fn nested_normalization(
    model: &GrwfModel,
    history: &[Flash],
    l: &CMat,
    remaining: usize,
    quadrature: &Quadrature,
    t0: f64,
) -> Result<CMat> {
    if remaining == 0 {
        return Ok(opcore::hermitian_part(&(l.adjoint() * l)));
    }
    let t_n = last_time(history, t0);
    let t_h = quadrature.window(model, history, t_n);
    let w_h = dyson_propagator(model, history, t_n, t_h, DYSON_TOL)?;
    let wl = &w_h * l;
    let mut acc = wl.adjoint() * wl;
    let (nodes, weights) = quadrature.rule(t_n, t_h);
    let ws = propagators_at(model, history, t_n, &nodes)?;
    let cells: Vec<(usize, usize, usize)> = (0..nodes.len())
        .flat_map(|j| {
            (0..model.space.n_labels)
                .flat_map(move |label| (0..model.space.n_q()).map(move |q| (j, q, label)))
        })
        .collect();
    let base = history.to_vec();
    let parts: Vec<Result<CMat>> = cells
        .par_iter()
        .map(|&(j, q, label)| {
            let c = model.collapse_op(&base, q, nodes[j], label);
            let next_l = c * &ws[j] * l;
            let mut next = base.clone();
            next.push(Flash {
                q,
                t: nodes[j],
                label,
            });
            let inner = nested_normalization(model, &next, &next_l, remaining - 1, quadrature, t0)?;
            Ok(inner * C64::from(weights[j] * model.space.cell_weight))
        })
        .collect();
    for p in parts {
        acc += p?;
    }
    Ok(opcore::hermitian_part(&acc))
}

#[derive(Clone, Debug)]
pub struct ConsistencyReport {
    pub deviation: f64,
    pub worst_history: Vec<Flash>,
    pub histories: usize,
}

/// max over the given f of ‖∫ dz E_{n+1}(f, z) + L_n*(lim W*W)L_n − E_n(f)‖_max.
/// The window integral uses `d_next`; the stopping term and the tail come from the model of `d`.
pub fn check_consistency(
    d_next: &HistoryDensity,
    d: &HistoryDensity,
    quadrature: Quadrature,
    histories: &[Vec<Flash>],
) -> Result<ConsistencyReport> {
    if d_next.n != d.n + 1 {
        return Err(Error::DimensionMismatch {
            expected: d.n + 1,
            found: d_next.n,
        });
    }
    let model = &d.model;
    let results: Vec<Result<(f64, Vec<Flash>)>> = histories
        .par_iter()
        .map(|f| {
            let t_n = last_time(f, d.t0);
            let t_h = quadrature.window(model, f, t_n);
            let l = ln_chain(model, f, d.t0)?;
            let wl = dyson_propagator(model, f, t_n, t_h, DYSON_TOL)? * &l;
            let mut acc = wl.adjoint() * wl;
            let (nodes, weights) = quadrature.rule(t_n, t_h);
            let mut ext = f.clone();
            ext.push(Flash {
                q: 0,
                t: t_n,
                label: 0,
            });
            for (t, w) in nodes.iter().zip(&weights) {
                for label in 0..model.space.n_labels {
                    for q in 0..model.space.n_q() {
                        *ext.last_mut().expect("nonempty") = Flash { q, t: *t, label };
                        acc += d_next.eval(&ext)? * C64::from(w * model.space.cell_weight);
                    }
                }
            }
            Ok((opcore::max_abs_diff(&acc, &d.eval(f)?), f.clone()))
        })
        .collect();
    let mut deviation = 0.0;
    let mut worst_history = Vec::new();
    for r in results {
        let (dev, f) = r?;
        if dev > deviation || worst_history.is_empty() {
            deviation = dev.max(deviation);
            worst_history = f;
        }
    }
    Ok(ConsistencyReport {
        deviation,
        worst_history,
        histories: histories.len(),
    })
}

/// POVM {E(v)} of an experiment on sys ⊗ env that runs during [t0, t_end] and reports
/// ζ of the (at most n) flashes in the window; shorter histories mean no further
/// flash before t_end. Returns E({v}) for v = 0..n_values.
#[allow(clippy::too_many_arguments)]
pub fn experiment_povm(
    model: &GrwfModel,
    t0: f64,
    t_end: f64,
    n: usize,
    quadrature: Quadrature,
    phi: &CVec,
    dim_sys: usize,
    zeta: &(dyn Fn(&[Flash]) -> usize + Sync),
    n_values: usize,
) -> Result<Vec<CMat>> {
    if dim_sys * phi.len() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            found: dim_sys * phi.len(),
        });
    }
    if (opcore::norm_sq(phi) - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter(
            "environment state must be normalized".into(),
        ));
    }
    if !(t_end > t0) {
        return Err(Error::InvalidParameter(
            "experiment window must have positive length".into(),
        ));
    }
    check_budget(&quadrature, model.space.n_cells(), n)?;
    let mut g = vec![CMat::zeros(model.dim, model.dim); n_values];
    let window = WindowIntegral {
        model,
        t_end,
        quadrature: &quadrature,
        zeta,
        n_values,
    };
    window.accumulate(
        &mut Vec::new(),
        &opcore::identity(model.dim),
        n,
        t0,
        1.0,
        &mut g,
    )?;
    g.iter()
        .map(|gv| {
            Ok(opcore::hermitian_part(&opcore::partial_env_expectation(
                gv, phi, dim_sys,
            )?))
        })
        .collect()
}

struct WindowIntegral<'a> {
    model: &'a GrwfModel,
    t_end: f64,
    quadrature: &'a Quadrature,
    zeta: &'a (dyn Fn(&[Flash]) -> usize + Sync),
    n_values: usize,
}

impl WindowIntegral<'_> {
    fn deposit(&self, history: &[Flash], op: CMat, g: &mut [CMat]) -> Result<()> {
        let v = (self.zeta)(history);
        if v >= self.n_values {
            return Err(Error::InvalidParameter(format!(
                "outcome {v} outside the value set of size {}",
                self.n_values
            )));
        }
        g[v] += op;
        Ok(())
    }

    fn accumulate(
        &self,
        history: &mut Vec<Flash>,
        l: &CMat,
        remaining: usize,
        t0: f64,
        weight: f64,
        g: &mut [CMat],
    ) -> Result<()> {
        let model = self.model;
        if remaining == 0 {
            return self.deposit(history, l.adjoint() * l * C64::from(weight), g);
        }
        let t_n = last_time(history, t0);
        let wl = dyson_propagator(model, history, t_n, self.t_end, DYSON_TOL)? * l;
        self.deposit(history, wl.adjoint() * wl * C64::from(weight), g)?;
        let span = self.quadrature.horizon / rate_scale(model, history, t_n);
        let panels = self.quadrature.panels * (((self.t_end - t_n) / span).ceil() as usize).max(1);
        let (nodes, weights) =
            quad::geometric_composite(t_n, self.t_end, panels, self.quadrature.per_panel, 1.0);
        let ws = propagators_at(model, history, t_n, &nodes)?;
        for (j, (&t, &w)) in nodes.iter().zip(&weights).enumerate() {
            for label in 0..model.space.n_labels {
                for q in 0..model.space.n_q() {
                    let next_l = model.collapse_op(history, q, t, label) * &ws[j] * l;
                    history.push(Flash { q, t, label });
                    self.accumulate(
                        history,
                        &next_l,
                        remaining - 1,
                        t0,
                        weight * w * model.space.cell_weight,
                        g,
                    )?;
                    history.pop();
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grwf::corpus;
    use crate::grwf::model::Tier;
    use crate::grwf::space::ConfigSpace;
    use crate::opcore::I;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_flash_density_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = corpus::random_simple(3, 2, 1.0, &mut rng).unwrap();
        let d = density_from_model(&m, 0, 0.0);
        assert!(opcore::max_abs_diff(&d.eval(&[]).unwrap(), &opcore::identity(3)) < 1e-15);
    }

    #[test]
    fn one_flash_density_of_simple_model_has_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = corpus::random_simple(3, 3, 0.7, &mut rng).unwrap();
        let d = density_from_model(&m, 1, 0.2);
        let z = Flash {
            q: 1,
            t: 1.4,
            label: 0,
        };
        let tau = z.t - 0.2;
        let h = m.hamiltonian(&[], 0.0);
        let u = opcore::matrix_exp(&(h * -I), tau);
        let expected = u.adjoint() * m.rate_op(&[], 1, 0.0, 0) * u * C64::from((-0.7 * tau).exp());
        assert!(opcore::max_abs_diff(&d.eval(&[z]).unwrap(), &expected) < 1e-12);
    }

    #[test]
    fn two_flash_density_matches_factor_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = corpus::random_variable_rate(3, 3, &mut rng).unwrap();
        let f = corpus::random_history(&m, 2, 0.0, &mut rng);
        let d = density_from_model(&m, 2, 0.0);
        let w1 = opcore::matrix_exp(&m.generator(&[], 0.0), f[0].t);
        let w2 = opcore::matrix_exp(&m.generator(&f[..1], 0.0), f[1].t - f[0].t);
        let c1 = m.collapse_op(&[], f[0].q, f[0].t, 0);
        let c2 = m.collapse_op(&f[..1], f[1].q, f[1].t, 0);
        let l = c2 * w2 * c1 * w1;
        assert!(opcore::max_abs_diff(&d.eval(&f).unwrap(), &(l.adjoint() * l)) < 1e-12);
    }

    #[test]
    fn density_vanishes_off_the_ordered_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = corpus::random_simple(2, 2, 1.0, &mut rng).unwrap();
        let d = density_from_model(&m, 2, 0.0);
        let f = [
            Flash {
                q: 0,
                t: 0.8,
                label: 0,
            },
            Flash {
                q: 1,
                t: 0.5,
                label: 0,
            },
        ];
        assert!(opcore::max_abs(&d.eval(&f).unwrap()) <= 1e-12);
        assert!(d.eval(&f[..1]).is_err());
    }

    #[test]
    fn zero_rate_model_normalization_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let space = ConfigSpace::uniform(2, 2.0, 1).unwrap();
        let h = corpus::random_hermitian(3, &mut rng);
        let m = GrwfModel::from_static(
            Tier::VariableRate,
            space,
            vec![CMat::zeros(3, 3); 2],
            h,
            None,
        )
        .unwrap();
        let r = check_normalization(&m, 2, Quadrature::level(1), 0.0).unwrap();
        assert!(r.deviation < 1e-13, "{}", r.deviation);
    }

    #[test]
    fn simple_model_normalization_matches_analytic_time_integral() {
        // Summing over cells first leaves λ e^{−λτ} in time, whose integral over the window plus e^{−λτ_h} is 1.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = corpus::random_simple(2, 3, 1.0, &mut rng).unwrap();
        let q = Quadrature::level(3);
        let (x, w) = q.rule(0.0, q.horizon);
        let oracle: f64 =
            x.iter().zip(&w).map(|(x, w)| w * (-x).exp()).sum::<f64>() + (-q.horizon).exp();
        let r = check_normalization(&m, 1, q, 0.0).unwrap();
        assert!((r.total[(0, 0)].re - oracle).abs() < 1e-12);
        assert!(r.deviation < 1e-8, "{}", r.deviation);
    }

    #[test]
    fn variable_rate_normalization_improves_with_refinement() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = corpus::random_stopping(3, 2, &mut rng).unwrap();
        let devs: Vec<f64> = (1..=3)
            .map(|l| {
                check_normalization(&m, 2, Quadrature::level(l), 0.0)
                    .unwrap()
                    .deviation
            })
            .collect();
        assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
        assert!(devs[2] < 1e-4, "{devs:?}");
    }

    #[test]
    fn budget_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = corpus::random_simple(2, 6, 1.0, &mut rng).unwrap();
        assert!(matches!(
            check_normalization(&m, 6, Quadrature::level(3), 0.0),
            Err(Error::QuadratureBudget { .. })
        ));
    }

    #[test]
    fn consistency_holds_and_detects_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = corpus::random_simple(3, 3, 1.0, &mut rng).unwrap();
        let hs: Vec<Vec<Flash>> = (0..10)
            .map(|_| corpus::random_history(&m, 1, 0.0, &mut rng))
            .collect();
        let d1 = density_from_model(&m, 1, 0.0);
        let d2 = density_from_model(&m, 2, 0.0);
        let ok = check_consistency(&d2, &d1, Quadrature::level(4), &hs).unwrap();
        assert!(ok.deviation < 1e-6, "{}", ok.deviation);
        let mc = m.clone();
        let bad = d2.clone().with_evaluator(Arc::new(move |f| {
            let l = ln_chain(&mc, f, 0.0)? * C64::from(1.01f64.sqrt());
            Ok(l.adjoint() * l)
        }));
        assert!(
            check_consistency(&bad, &d1, Quadrature::level(4), &hs)
                .unwrap()
                .deviation
                > 1e-3
        );
    }

    #[test]
    fn consistency_from_empty_history_is_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = corpus::random_variable_rate(2, 3, &mut rng).unwrap();
        let q = Quadrature::level(2);
        let c = check_consistency(
            &density_from_model(&m, 1, 0.0),
            &density_from_model(&m, 0, 0.0),
            q,
            &[vec![]],
        )
        .unwrap();
        let n = check_normalization(&m, 1, q, 0.0).unwrap();
        assert!((c.deviation - n.deviation).abs() < 1e-14);
    }

    fn first_label(f: &[Flash]) -> usize {
        f.first().map_or(0, |z| z.label + 1)
    }

    #[test]
    fn constant_readout_gives_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = corpus::random_labeled(2, 2, 2, 1.0, &mut rng).unwrap();
        let phi = CVec::from_element(1, C64::from(1.0));
        let e = experiment_povm(&m, 0.0, 2.0, 2, Quadrature::level(3), &phi, 2, &|_| 1, 3).unwrap();
        assert!(opcore::max_abs_diff(&e[1], &opcore::identity(2)) < 1e-8);
        assert_eq!(opcore::max_abs(&e[0]), 0.0);
        assert_eq!(opcore::max_abs(&e[2]), 0.0);
    }

    #[test]
    fn first_label_readout_with_passive_environment_matches_system_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sys = corpus::random_labeled(2, 2, 2, 1.0, &mut rng).unwrap();
        let h_env = corpus::random_hermitian(2, &mut rng);
        let id_env = opcore::identity(2);
        let collapse: Vec<CMat> = sys
            .static_collapse_ops()
            .unwrap()
            .iter()
            .map(|c| c.kronecker(&id_env))
            .collect();
        let h =
            sys.hamiltonian(&[], 0.0).kronecker(&id_env) + opcore::identity(2).kronecker(&h_env);
        let joint =
            GrwfModel::from_static(Tier::Labeled, sys.space.clone(), collapse, h, Some(1.0))
                .unwrap();
        let phi = corpus::random_state(2, &mut rng);
        let trivial = CVec::from_element(1, C64::from(1.0));
        let q = Quadrature::level(2);
        let e_joint = experiment_povm(&joint, 0.0, 1.5, 1, q, &phi, 2, &first_label, 3).unwrap();
        let e_sys = experiment_povm(&sys, 0.0, 1.5, 1, q, &trivial, 2, &first_label, 3).unwrap();
        let mut total = CMat::zeros(2, 2);
        for (a, b) in e_joint.iter().zip(&e_sys) {
            assert!(opcore::max_abs_diff(a, b) < 1e-8);
            assert!(opcore::min_eigenvalue(a) > -1e-10);
            total += a;
        }
        assert!(opcore::max_abs_diff(&total, &opcore::identity(2)) < 1e-6);
    }

    #[test]
    fn mismatched_factorization_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = corpus::random_simple(4, 2, 1.0, &mut rng).unwrap();
        let phi = CVec::from_element(3, C64::from(1.0 / 3f64.sqrt()));
        assert!(
            experiment_povm(&m, 0.0, 1.0, 1, Quadrature::level(1), &phi, 2, &|_| 0, 1).is_err()
        );
    }
}
