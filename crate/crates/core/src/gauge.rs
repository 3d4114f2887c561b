//! Unitary reparameterizations (H, C) → (H̃, C̃) that leave every history density unchanged.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grwf::model::GrwfModel;
use crate::grwf::propagator::{dyson_propagator, time_ordered_exp, DYSON_TOL};
use crate::grwf::space::{last_time, Flash};
use crate::opcore::{self, CMat, C64, I};

/// Step of the finite-difference derivative dU/dt.
pub const DERIVATIVE_STEP: f64 = 1e-5;

/// U_0^t(f).
pub type GaugeFn = dyn Fn(&[Flash], f64) -> CMat + Send + Sync;

/// A family of unitaries U_0^t(f) indexed by history and time, normalized at `origin`.
#[derive(Clone)]
pub struct GaugeFamily {
    u: Arc<GaugeFn>,
    pub dim: usize,
    pub origin: f64,
    pub time_dependent: bool,
    pub past_dependent: bool,
}

impl GaugeFamily {
    pub fn new(
        dim: usize,
        origin: f64,
        time_dependent: bool,
        past_dependent: bool,
        u: Arc<GaugeFn>,
    ) -> Self {
        Self {
            u,
            dim,
            origin,
            time_dependent,
            past_dependent,
        }
    }

    pub fn identity(dim: usize) -> Self {
        let id = opcore::identity(dim);
        Self::new(dim, 0.0, false, false, Arc::new(move |_, _| id.clone()))
    }

    pub fn constant(u: CMat) -> Result<Self> {
        let dev = opcore::unitarity_deviation(&u);
        if dev > opcore::UNITARY_TOL {
            return Err(Error::NotUnitary { deviation: dev });
        }
        Ok(Self::new(
            u.nrows(),
            0.0,
            false,
            false,
            Arc::new(move |_, _| u.clone()),
        ))
    }

    /// Solves dU/dt = −iH(f, t)U between flashes, continuous across flashes.
    /// Removes the Hamiltonian from the model.
    pub fn heisenberg(model: &GrwfModel, t0: f64) -> Self {
        let m = model.clone();
        Self::new(
            model.dim,
            t0,
            true,
            model.is_past_dependent(),
            Arc::new(move |f, t| plus_unitary(&m, f, t, t0, false)),
        )
    }

    /// Heisenberg flow with the polar jump U(f, t_n) = unitary factor of C(f)·U(f_{n−1}, t_n).
    pub fn heisenberg_plus(model: &GrwfModel, t0: f64) -> Self {
        let m = model.clone();
        Self::new(
            model.dim,
            t0,
            true,
            true,
            Arc::new(move |f, t| plus_unitary(&m, f, t, t0, true)),
        )
    }

    /// U(t) = W_{t0}^t(∅)·(W*W)^{−1/2}, history-independent.
    pub fn square_root(model: &GrwfModel, t0: f64) -> Self {
        let m = model.clone();
        Self::new(
            model.dim,
            t0,
            true,
            false,
            Arc::new(move |_, t| {
                let w = dyson_propagator(&m, &[], t0, t.max(t0), DYSON_TOL)
                    .unwrap_or_else(|_| opcore::identity(m.dim));
                opcore::polar_unitary_unchecked(&w)
            }),
        )
    }

    pub fn at(&self, history: &[Flash], t: f64) -> CMat {
        (self.u)(history, t)
    }

    /// U_s^t(f) = U_0^t(f)·U_0^s(f)*.
    pub fn between(&self, history: &[Flash], s: f64, t: f64) -> CMat {
        self.at(history, t) * self.at(history, s).adjoint()
    }

    /// The family U_self·U_next, equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &GaugeFamily) -> GaugeFamily {
        let a = self.u.clone();
        let b = next.u.clone();
        Self::new(
            self.dim,
            self.origin.max(next.origin),
            self.time_dependent || next.time_dependent,
            self.past_dependent || next.past_dependent,
            Arc::new(move |f, t| a(f, t) * b(f, t)),
        )
    }

    /// dU/dt by central differences, one-sided second order near the start of the interval.
    pub fn time_derivative(&self, history: &[Flash], t: f64) -> CMat {
        let h = DERIVATIVE_STEP;
        let lo = if self.past_dependent {
            last_time(history, self.origin)
        } else {
            self.origin
        };
        if t - h >= lo {
            (self.at(history, t + h) - self.at(history, t - h)) / C64::from(2.0 * h)
        } else {
            (self.at(history, t) * C64::from(-3.0) + self.at(history, t + h) * C64::from(4.0)
                - self.at(history, t + 2.0 * h))
                / C64::from(2.0 * h)
        }
    }

    /// Largest deviation from unitarity over the given probe points.
    pub fn unitarity_deviation(&self, probes: &[(Vec<Flash>, f64)]) -> f64 {
        probes
            .iter()
            .map(|(f, t)| opcore::unitarity_deviation(&self.at(f, *t)))
            .fold(0.0, f64::max)
    }
}

/// Recursion shared by the Heisenberg and Heisenberg-plus gauges.
fn plus_unitary(model: &GrwfModel, history: &[Flash], t: f64, t0: f64, polar: bool) -> CMat {
    let mut u = opcore::identity(model.dim);
    let mut prev = t0;
    for (k, z) in history.iter().enumerate() {
        let past = &history[..k];
        u = hamiltonian_flow(model, past, prev, z.t) * u;
        if polar {
            u = opcore::polar_unitary_unchecked(&(model.collapse_op(past, z.q, z.t, z.label) * &u));
        }
        prev = z.t;
    }
    hamiltonian_flow(model, history, prev, t.max(prev)) * u
}

fn hamiltonian_flow(model: &GrwfModel, history: &[Flash], s: f64, t: f64) -> CMat {
    if t <= s {
        return opcore::identity(model.dim);
    }
    if !model.is_time_dependent() {
        return opcore::matrix_exp(&(model.hamiltonian(history, s) * -I), t - s);
    }
    time_ordered_exp(
        &|tau| model.hamiltonian(history, tau) * -I,
        model.dim,
        s,
        t,
        DYSON_TOL,
    )
    .unwrap_or_else(|_| opcore::identity(model.dim))
}

fn probe_points(g: &GaugeFamily) -> Vec<(Vec<Flash>, f64)> {
    [0.0, 0.5, 1.0, 2.0]
        .iter()
        .map(|dt| (Vec::new(), g.origin + dt))
        .collect()
}

/// H̃ = U*HU + i(dU/dt)*U, C̃(f, z) = U(f+z, t)*·C(f, z)·U(f, t).
pub fn apply_gauge(model: &GrwfModel, g: &GaugeFamily) -> Result<GrwfModel> {
    if g.dim != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            found: g.dim,
        });
    }
    let dev = g.unitarity_deviation(&probe_points(g));
    if dev > 1e-9 {
        return Err(Error::NotUnitary { deviation: dev });
    }
    let m = Arc::new(model.clone());
    let (mc, gc) = (m.clone(), g.clone());
    let collapse = move |f: &[Flash], q: usize, t: f64, label: usize| {
        let u = gc.at(f, t);
        let after = if gc.past_dependent {
            let mut ext = f.to_vec();
            ext.push(Flash { q, t, label });
            gc.at(&ext, t)
        } else {
            u.clone()
        };
        after.adjoint() * mc.collapse_op(f, q, t, label) * u
    };
    let (mh, gh) = (m.clone(), g.clone());
    let hamiltonian = move |f: &[Flash], t: f64| {
        let u = gh.at(f, t);
        let mut h = u.adjoint() * mh.hamiltonian(f, t) * &u;
        if gh.time_dependent {
            h += gh.time_derivative(f, t).adjoint() * &u * I;
        }
        opcore::hermitian_part(&h)
    };
    let (mr, gr) = (m.clone(), g.clone());
    let rate = move |f: &[Flash], q: usize, t: f64, label: usize| {
        let u = gr.at(f, t);
        opcore::hermitian_part(&(u.adjoint() * mr.rate_op(f, q, t, label) * u))
    };
    let (mt, gt) = (m.clone(), g.clone());
    let total = move |f: &[Flash], t: f64| {
        let u = gt.at(f, t);
        opcore::hermitian_part(&(u.adjoint() * mt.total_rate(f, t) * u))
    };
    Ok(GrwfModel::dynamic(
        model.tier,
        model.space.clone(),
        model.dim,
        Arc::new(collapse),
        Arc::new(hamiltonian),
        model.is_time_dependent() || g.time_dependent,
        model.is_past_dependent() || g.past_dependent,
        model.lambda_const,
    )?
    .with_rate_evaluators(Arc::new(rate), Arc::new(total)))
}

/// Model with H̃ = 0 and positive C̃, obtained by the Heisenberg-plus gauge.
/// Bijectivity of C is checked at the empty history at t0 and t0 + 1.
pub fn heisenberg_plus_picture(model: &GrwfModel, t0: f64) -> Result<GrwfModel> {
    for t in [t0, t0 + 1.0] {
        for label in 0..model.space.n_labels {
            for q in 0..model.space.n_q() {
                let min = opcore::min_singular_value(&model.collapse_op(&[], q, t, label));
                if !(min > opcore::SINGULAR_CUTOFF) {
                    return Err(Error::Singular { min_singular: min });
                }
            }
        }
    }
    let g = GaugeFamily::heisenberg_plus(model, t0);
    let m = Arc::new(model.clone());
    let (mc, gc) = (m.clone(), g.clone());
    let collapse = move |f: &[Flash], q: usize, t: f64, label: usize| {
        let t_mat = mc.collapse_op(f, q, t, label) * gc.at(f, t);
        opcore::hermitian_part(&opcore::polar_positive(&t_mat))
    };
    let zero = CMat::zeros(model.dim, model.dim);
    let hamiltonian = move |_: &[Flash], _: f64| zero.clone();
    let (mr, gr) = (m.clone(), g.clone());
    let rate = move |f: &[Flash], q: usize, t: f64, label: usize| {
        let u = gr.at(f, t);
        opcore::hermitian_part(&(u.adjoint() * mr.rate_op(f, q, t, label) * u))
    };
    let (mt, gt) = (m.clone(), g.clone());
    let total = move |f: &[Flash], t: f64| {
        let u = gt.at(f, t);
        opcore::hermitian_part(&(u.adjoint() * mt.total_rate(f, t) * u))
    };
    let has_h = opcore::max_abs(&model.hamiltonian(&[], t0)) > 0.0
        || model.is_time_dependent()
        || model.is_past_dependent();
    Ok(GrwfModel::dynamic(
        model.tier,
        model.space.clone(),
        model.dim,
        Arc::new(collapse),
        Arc::new(hamiltonian),
        has_h,
        true,
        model.lambda_const,
    )?
    .with_rate_evaluators(Arc::new(rate), Arc::new(total)))
}

/// Model in which W̃_{t0}^t(∅) = (W*W)^{1/2} is positive.
pub fn square_root_picture(model: &GrwfModel, t0: f64) -> Result<GrwfModel> {
    for dt in [0.5, 1.0, 2.0] {
        let w = dyson_propagator(model, &[], t0, t0 + dt, DYSON_TOL)?;
        let min = opcore::min_singular_value(&w);
        if !(min > opcore::SINGULAR_CUTOFF) {
            return Err(Error::Singular { min_singular: min });
        }
    }
    apply_gauge(model, &GaugeFamily::square_root(model, t0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grwf::corpus;
    use crate::grwf::model::Tier;
    use crate::grwf::propagator::ln_chain;
    use crate::grwf::space::ConfigSpace;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn density_dev(a: &GrwfModel, b: &GrwfModel, histories: &[Vec<Flash>]) -> f64 {
        histories
            .iter()
            .map(|f| {
                let la = ln_chain(a, f, 0.0).unwrap();
                let lb = ln_chain(b, f, 0.0).unwrap();
                opcore::max_abs_diff(&(la.adjoint() * la), &(lb.adjoint() * lb))
            })
            .fold(0.0, f64::max)
    }

    fn histories(model: &GrwfModel, rng: &mut ChaCha8Rng) -> Vec<Vec<Flash>> {
        (0..3)
            .flat_map(|n| (0..3).map(move |_| n))
            .map(|n| corpus::random_history(model, n, 0.0, rng))
            .collect()
    }

    #[test]
    fn identity_gauge_leaves_operators_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = corpus::random_simple(3, 3, 1.0, &mut rng).unwrap();
        let g = apply_gauge(&m, &GaugeFamily::identity(3)).unwrap();
        assert!(opcore::max_abs_diff(&g.hamiltonian(&[], 0.3), &m.hamiltonian(&[], 0.3)) < 1e-14);
        assert!(
            opcore::max_abs_diff(
                &g.collapse_op(&[], 1, 0.3, 0),
                &m.collapse_op(&[], 1, 0.3, 0)
            ) < 1e-14
        );
    }

    #[test]
    fn constant_unitary_preserves_densities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = corpus::random_labeled(3, 3, 2, 1.0, &mut rng).unwrap();
        let u = corpus::random_unitary(3, &mut rng);
        let g = apply_gauge(&m, &GaugeFamily::constant(u.clone()).unwrap()).unwrap();
        let h = u.adjoint() * m.hamiltonian(&[], 0.0) * &u;
        assert!(opcore::max_abs_diff(&g.hamiltonian(&[], 0.7), &h) < 1e-12);
        // U_0^{t0} = U here, so the densities agree after conjugating the original by U.
        for f in histories(&m, &mut rng) {
            let l = ln_chain(&m, &f, 0.0).unwrap();
            let lg = ln_chain(&g, &f, 0.0).unwrap();
            let expected = u.adjoint() * l.adjoint() * l * &u;
            assert!(opcore::max_abs_diff(&(lg.adjoint() * lg), &expected) < 1e-10);
        }
    }

    #[test]
    fn heisenberg_gauge_removes_constant_hamiltonian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = corpus::random_simple(3, 3, 1.0, &mut rng).unwrap();
        let g = apply_gauge(&m, &GaugeFamily::heisenberg(&m, 0.0)).unwrap();
        for t in [0.0, 0.4, 1.3] {
            assert!(opcore::max_abs(&g.hamiltonian(&[], t)) < 1e-6);
        }
        let hs = histories(&m, &mut rng);
        assert!(density_dev(&m, &g, &hs) < 1e-8);
    }

    #[test]
    fn non_unitary_family_is_rejected() {
        let bad = GaugeFamily::new(
            2,
            0.0,
            false,
            false,
            Arc::new(|_, _| opcore::identity(2) * C64::from(1.1)),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = corpus::random_simple(2, 2, 1.0, &mut rng).unwrap();
        assert!(matches!(
            apply_gauge(&m, &bad),
            Err(Error::NotUnitary { .. })
        ));
        assert!(GaugeFamily::constant(opcore::identity(2) * C64::from(2.0)).is_err());
    }

    #[test]
    fn heisenberg_plus_has_zero_hamiltonian_and_positive_collapse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = corpus::random_past_dependent(3, 3, false, &mut rng).unwrap();
        let hp = heisenberg_plus_picture(&m, 0.0).unwrap();
        let hs = histories(&m, &mut rng);
        for f in &hs {
            let t = last_time(f, 0.0) + 0.3;
            assert_eq!(opcore::max_abs(&hp.hamiltonian(f, t)), 0.0);
            for q in 0..3 {
                let c = hp.collapse_op(f, q, t, 0);
                assert!(opcore::hermitian_deviation(&c) < 1e-12);
                assert!(opcore::min_eigenvalue(&c) > -1e-9);
            }
        }
        assert!(density_dev(&m, &hp, &hs) < 1e-8);
    }

    #[test]
    fn heisenberg_plus_is_identity_on_positive_static_models() {
        let space = ConfigSpace::uniform(2, 2.0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let raw: Vec<CMat> = (0..2)
            .map(|_| corpus::random_positive(2, &mut rng))
            .collect();
        let rates = crate::grwf::builders::normalize_family(&raw, 1.0, 1.0).unwrap();
        let c: Vec<CMat> = rates
            .iter()
            .map(|r| opcore::positive_sqrt(r).unwrap())
            .collect();
        let m =
            GrwfModel::from_static(Tier::Simple, space, c.clone(), CMat::zeros(2, 2), Some(1.0))
                .unwrap();
        let hp = heisenberg_plus_picture(&m, 0.0).unwrap();
        let f = vec![Flash {
            q: 1,
            t: 0.4,
            label: 0,
        }];
        for q in 0..2 {
            assert!(opcore::max_abs_diff(&hp.collapse_op(&f, q, 0.9, 0), &c[q]) < 1e-10);
        }
    }

    #[test]
    fn heisenberg_plus_recovers_positive_part_of_collapse() {
        // H = 0 and C = Λ^{1/2}·V: the first jump gives C̃ = (C*C)^{1/2}, and C = V·Λ^{1/2} gives Λ^{1/2}.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let space = ConfigSpace::uniform(2, 2.0, 1).unwrap();
        let lam = corpus::random_positive(3, &mut rng);
        let root = opcore::positive_sqrt(&lam).unwrap();
        let v = corpus::random_unitary(3, &mut rng);
        let c = vec![&root * &v, &v * &root];
        let m = GrwfModel::from_static(
            Tier::VariableRate,
            space,
            c.clone(),
            CMat::zeros(3, 3),
            None,
        )
        .unwrap();
        let hp = heisenberg_plus_picture(&m, 0.0).unwrap();
        let c0 = hp.collapse_op(&[], 0, 0.5, 0);
        let expected = opcore::positive_sqrt(&(c[0].adjoint() * &c[0])).unwrap();
        assert!(opcore::max_abs_diff(&c0, &expected) < 1e-8);
        assert!(opcore::max_abs_diff(&hp.collapse_op(&[], 1, 0.5, 0), &root) < 1e-8);
    }

    #[test]
    fn heisenberg_plus_rejects_singular_collapse() {
        let space = ConfigSpace::uniform(2, 2.0, 1).unwrap();
        let mut p = CMat::zeros(2, 2);
        p[(0, 0)] = C64::from(1.0);
        let m = GrwfModel::from_static(
            Tier::VariableRate,
            space,
            vec![p.clone(), p],
            CMat::zeros(2, 2),
            None,
        )
        .unwrap();
        assert!(matches!(
            heisenberg_plus_picture(&m, 0.0),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn square_root_picture_makes_w_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = corpus::random_variable_rate(3, 3, &mut rng).unwrap();
        let s = square_root_picture(&m, 0.0).unwrap();
        for t in [0.3, 1.0, 2.5] {
            let w = dyson_propagator(&s, &[], 0.0, t, DYSON_TOL).unwrap();
            assert!(opcore::hermitian_deviation(&w) < 1e-9, "t = {t}");
            assert!(opcore::min_eigenvalue(&opcore::hermitian_part(&w)) > -1e-9);
            let w0 = dyson_propagator(&m, &[], 0.0, t, DYSON_TOL).unwrap();
            assert!(opcore::max_abs_diff(&(w.adjoint() * &w), &(w0.adjoint() * &w0)) < 1e-9);
            for _ in 0..20 {
                let psi = corpus::random_state(3, &mut rng);
                let a = opcore::norm_sq(&(&w * &psi));
                let b = opcore::norm_sq(&(&w0 * &psi));
                assert!((a - b).abs() < 1e-10);
            }
        }
        let hs = histories(&m, &mut rng);
        assert!(density_dev(&m, &s, &hs) < 1e-8);
    }

    #[test]
    fn square_root_picture_with_commuting_rates_and_no_hamiltonian_is_trivial() {
        let space = ConfigSpace::uniform(2, 2.0, 1).unwrap();
        let d = |a: f64, b: f64| {
            CMat::from_diagonal(&crate::opcore::CVec::from_vec(vec![
                C64::from(a),
                C64::from(b),
            ]))
        };
        let m = GrwfModel::from_static(
            Tier::VariableRate,
            space,
            vec![d(0.5, 1.0), d(0.8, 0.2)],
            CMat::zeros(2, 2),
            None,
        )
        .unwrap();
        let s = square_root_picture(&m, 0.0).unwrap();
        assert!(
            opcore::max_abs_diff(
                &s.collapse_op(&[], 0, 0.7, 0),
                &m.collapse_op(&[], 0, 0.7, 0)
            ) < 1e-12
        );
        assert!(opcore::max_abs(&s.hamiltonian(&[], 0.7)) < 1e-8);
    }

    #[test]
    fn square_root_picture_changes_w_when_rates_do_not_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = corpus::random_time_dependent(2, 2, &mut rng).unwrap();
        let zero_h = GrwfModel::dynamic(
            Tier::TimeDependent,
            m.space.clone(),
            2,
            {
                let m = m.clone();
                Arc::new(move |f: &[Flash], q, t, l| m.collapse_op(f, q, t, l))
            },
            Arc::new(|_: &[Flash], _| CMat::zeros(2, 2)),
            true,
            false,
            None,
        )
        .unwrap();
        let s = square_root_picture(&zero_h, 0.0).unwrap();
        let w = dyson_propagator(&s, &[], 0.0, 1.5, DYSON_TOL).unwrap();
        let w0 = dyson_propagator(&zero_h, &[], 0.0, 1.5, DYSON_TOL).unwrap();
        assert!(opcore::hermitian_deviation(&w) < 1e-9);
        assert!(opcore::hermitian_deviation(&w0) > 1e-6);
    }

    #[test]
    fn composition_matches_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = corpus::random_simple(2, 3, 1.0, &mut rng).unwrap();
        let g1 = GaugeFamily::constant(corpus::random_unitary(2, &mut rng)).unwrap();
        let g2 = GaugeFamily::heisenberg(&m, 0.0);
        let seq = apply_gauge(&apply_gauge(&m, &g1).unwrap(), &g2).unwrap();
        let comp = apply_gauge(&m, &g1.then(&g2)).unwrap();
        let f = vec![Flash {
            q: 2,
            t: 0.5,
            label: 0,
        }];
        assert!(
            opcore::max_abs_diff(
                &seq.collapse_op(&f, 1, 0.9, 0),
                &comp.collapse_op(&f, 1, 0.9, 0)
            ) < 1e-9
        );
        assert!(opcore::max_abs_diff(&seq.hamiltonian(&f, 0.9), &comp.hamiltonian(&f, 0.9)) < 1e-9);
    }

    #[test]
    fn between_satisfies_composition_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = corpus::random_time_dependent(3, 2, &mut rng).unwrap();
        let g = GaugeFamily::heisenberg(&m, 0.0);
        let lhs = g.between(&[], 0.4, 1.1) * g.between(&[], 0.2, 0.4);
        assert!(opcore::max_abs_diff(&lhs, &g.between(&[], 0.2, 1.1)) < 1e-12);
        assert!(opcore::max_abs_diff(&g.between(&[], 0.7, 0.7), &opcore::identity(3)) < 1e-12);
    }
}
