//! Recovery of collapse operators and propagators from history densities, in
//! the square-root-plus picture (W and C positive) and the Heisenberg-plus
//! picture (H = 0, C positive).

use crate::error::{Error, Result};
use crate::grwf::space::{last_time, Flash};
use crate::opcore::{self, CMat, C64};
use crate::povm::HistoryDensity;
use crate::quad;

/// Bijectivity threshold on densities and survival operators.
pub const DENSITY_CUTOFF: f64 = 1e-8;
/// Panel length and node count of the finite time integrals.
const PANEL_LENGTH: f64 = 0.25;
const PANEL_NODES: usize = 10;

fn history_label(f: &[Flash]) -> String {
    let parts: Vec<String> = f
        .iter()
        .map(|z| format!("(q={}, t={:.6}, i={})", z.q, z.t, z.label))
        .collect();
    format!("[{}]", parts.join(", "))
}

fn check_bijective(m: &CMat, f: &[Flash]) -> Result<()> {
    let min = opcore::min_singular_value(m);
    if !(min > DENSITY_CUTOFF) {
        return Err(Error::SingularDensity {
            history: history_label(f),
            min_singular: min,
        });
    }
    Ok(())
}

fn check_chain(densities: &[HistoryDensity]) -> Result<()> {
    if densities.len() < 2 {
        return Err(Error::InvalidParameter(
            "need the densities E_0 and E_1 at least".into(),
        ));
    }
    for (k, d) in densities.iter().enumerate() {
        if d.n != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: d.n,
            });
        }
        if d.model.dim != densities[0].model.dim {
            return Err(Error::DimensionMismatch {
                expected: densities[0].model.dim,
                found: d.model.dim,
            });
        }
    }
    Ok(())
}

/// Σ_{i, q} Δq E_{n+1}(f, (q, t, i)).
fn summed_density(d_next: &HistoryDensity, history: &[Flash], t: f64) -> Result<CMat> {
    let space = &d_next.model.space;
    let mut ext = history.to_vec();
    ext.push(Flash { q: 0, t, label: 0 });
    let mut acc = CMat::zeros(d_next.model.dim, d_next.model.dim);
    for label in 0..space.n_labels {
        for q in 0..space.n_q() {
            *ext.last_mut().expect("nonempty") = Flash { q, t, label };
            acc += d_next.eval(&ext)?;
        }
    }
    Ok(acc * C64::from(space.cell_weight))
}

/// ∫_{a}^{b} Σ E_{n+1}(f, ·) ds by composite Gauss–Legendre.
fn window_integral(d_next: &HistoryDensity, history: &[Flash], a: f64, b: f64) -> Result<CMat> {
    let mut acc = CMat::zeros(d_next.model.dim, d_next.model.dim);
    if b <= a {
        return Ok(acc);
    }
    let panels = ((b - a) / PANEL_LENGTH).ceil().max(1.0) as usize;
    let (nodes, weights) = quad::geometric_composite(a, b, panels, PANEL_NODES, 1.0);
    for (t, w) in nodes.iter().zip(&weights) {
        acc += summed_density(d_next, history, *t)? * C64::from(*w);
    }
    Ok(acc)
}

/// Operators of the square-root-plus picture built from E_0, …, E_{n_max+1}.
#[derive(Clone)]
pub struct SqrtPlusReconstruction {
    densities: Vec<HistoryDensity>,
}

pub fn reconstruct_sqrt_plus(densities: Vec<HistoryDensity>) -> Result<SqrtPlusReconstruction> {
    check_chain(&densities)?;
    Ok(SqrtPlusReconstruction { densities })
}

impl SqrtPlusReconstruction {
    /// Largest n for which W^t(f_n) and Λ(f_n, z) are available.
    pub fn n_max(&self) -> usize {
        self.densities.len() - 2
    }

    fn t0(&self) -> f64 {
        self.densities[0].t0
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n > self.n_max() {
            return Err(Error::InvalidParameter(format!(
                "history of {n} flashes exceeds the reconstruction depth {}",
                self.n_max()
            )));
        }
        Ok(())
    }

    /// W^t(f_n) = (L_n*^{-1} [E_n − ∫_{t_n}^t Σ E_{n+1}] L_n^{-1})^{1/2}, given L_n.
    fn w_given_l(&self, history: &[Flash], l: &CMat, t: f64) -> Result<CMat> {
        let n = history.len();
        let t_n = last_time(history, self.t0());
        let survival = self.densities[n].eval(history)?
            - window_integral(&self.densities[n + 1], history, t_n, t)?;
        let l_inv = opcore::inverse_with_cutoff(l, DENSITY_CUTOFF)?;
        let m = opcore::hermitian_part(&(l_inv.adjoint() * survival * &l_inv));
        check_bijective(&m, history)?;
        opcore::positive_sqrt(&m)
    }

    /// Λ(f_n, z) = W^{-1} L_n*^{-1} E_{n+1}(f_n, z) L_n^{-1} W^{-1} with W = W^{t_z}(f_n).
    fn lambda_given_l(&self, history: &[Flash], l: &CMat, z: Flash) -> Result<CMat> {
        let w = self.w_given_l(history, l, z.t)?;
        let wl = w * l;
        let wl_inv = opcore::inverse_with_cutoff(&wl, DENSITY_CUTOFF)?;
        let mut ext = history.to_vec();
        ext.push(z);
        let e = self.densities[history.len() + 1].eval(&ext)?;
        Ok(opcore::hermitian_part(&(wl_inv.adjoint() * e * wl_inv)))
    }

    /// L_n(f_n) for n ≤ n_max + 1.
    pub fn l(&self, history: &[Flash]) -> Result<CMat> {
        if history.len() > self.n_max() + 1 {
            return Err(Error::InvalidParameter(
                "history longer than the available densities".into(),
            ));
        }
        let dim = self.densities[0].model.dim;
        let mut l = opcore::identity(dim);
        for k in 0..history.len() {
            let past = &history[..k];
            let e = self.densities[k].eval(past)?;
            check_bijective(&e, past)?;
            let w = self.w_given_l(past, &l, history[k].t)?;
            let lambda = self.lambda_given_l(past, &l, history[k])?;
            l = opcore::positive_sqrt(&lambda)? * w * l;
        }
        Ok(l)
    }

    pub fn w(&self, history: &[Flash], t: f64) -> Result<CMat> {
        self.check_len(history.len())?;
        let l = self.l(history)?;
        self.w_given_l(history, &l, t)
    }

    pub fn lambda(&self, history: &[Flash], z: Flash) -> Result<CMat> {
        self.check_len(history.len())?;
        let l = self.l(history)?;
        self.lambda_given_l(history, &l, z)
    }

    /// C(f_n, z) = Λ(f_n, z)^{1/2}.
    pub fn c(&self, history: &[Flash], z: Flash) -> Result<CMat> {
        opcore::positive_sqrt(&self.lambda(history, z)?)
    }

    /// max over the histories of ‖L_n*L_n − E_n‖_max.
    pub fn roundtrip_deviation(&self, histories: &[Vec<Flash>]) -> Result<f64> {
        roundtrip(&self.densities, histories, |f| self.l(f))
    }
}

fn roundtrip(
    densities: &[HistoryDensity],
    histories: &[Vec<Flash>],
    l: impl Fn(&[Flash]) -> Result<CMat>,
) -> Result<f64> {
    let mut dev: f64 = 0.0;
    for f in histories {
        let d = densities
            .get(f.len())
            .ok_or_else(|| Error::InvalidParameter("no density for this history length".into()))?;
        let lf = l(f)?;
        dev = dev.max(opcore::max_abs_diff(&(lf.adjoint() * lf), &d.eval(f)?));
    }
    Ok(dev)
}

/// Operators of the Heisenberg-plus picture: W solves dW/dt = −½W*^{-1}L*^{-1}Ē L^{-1}
/// from W^{t_n}(f_n) = I by RK4, where Ē is the summed density E_{n+1}.
#[derive(Clone)]
pub struct HeisenbergPlusReconstruction {
    densities: Vec<HistoryDensity>,
    pub step: f64,
}

/// `grid_step` is the evaluation time step; the ODE uses a quarter of it.
pub fn reconstruct_heisenberg_plus(
    densities: Vec<HistoryDensity>,
    grid_step: f64,
) -> Result<HeisenbergPlusReconstruction> {
    check_chain(&densities)?;
    if !(grid_step > 0.0) || !grid_step.is_finite() {
        return Err(Error::InvalidParameter(
            "time grid step must be positive".into(),
        ));
    }
    Ok(HeisenbergPlusReconstruction {
        densities,
        step: grid_step / 4.0,
    })
}

impl HeisenbergPlusReconstruction {
    pub fn n_max(&self) -> usize {
        self.densities.len() - 2
    }

    fn t0(&self) -> f64 {
        self.densities[0].t0
    }

    fn rhs(&self, history: &[Flash], l_inv: &CMat, w: &CMat, t: f64) -> Result<CMat> {
        let e = summed_density(&self.densities[history.len() + 1], history, t)?;
        let w_inv = opcore::inverse_with_cutoff(w, DENSITY_CUTOFF)
            .map_err(|_| Error::NonConvergence { what: "W ode step" })?;
        Ok(w_inv.adjoint() * l_inv.adjoint() * e * l_inv * C64::from(-0.5))
    }

    fn w_given_l(&self, history: &[Flash], l: &CMat, t: f64) -> Result<CMat> {
        let t_n = last_time(history, self.t0());
        let mut w = opcore::identity(l.nrows());
        if t <= t_n {
            return Ok(w);
        }
        let l_inv = opcore::inverse_with_cutoff(l, DENSITY_CUTOFF)?;
        let steps = ((t - t_n) / self.step).ceil().max(1.0) as usize;
        let h = (t - t_n) / steps as f64;
        let hc = C64::from(h);
        for k in 0..steps {
            let s = t_n + k as f64 * h;
            let k1 = self.rhs(history, &l_inv, &w, s)?;
            let k2 = self.rhs(history, &l_inv, &(&w + &k1 * (hc * 0.5)), s + 0.5 * h)?;
            let k3 = self.rhs(history, &l_inv, &(&w + &k2 * (hc * 0.5)), s + 0.5 * h)?;
            let k4 = self.rhs(history, &l_inv, &(&w + &k3 * hc), s + h)?;
            w += (k1 + k2 * C64::from(2.0) + k3 * C64::from(2.0) + k4) * (hc / 6.0);
            if !opcore::is_finite(&w) {
                return Err(Error::NonConvergence { what: "W ode step" });
            }
        }
        Ok(w)
    }

    fn lambda_given_l(&self, history: &[Flash], l: &CMat, z: Flash) -> Result<CMat> {
        let wl = self.w_given_l(history, l, z.t)? * l;
        let wl_inv = opcore::inverse_with_cutoff(&wl, DENSITY_CUTOFF)?;
        let mut ext = history.to_vec();
        ext.push(z);
        let e = self.densities[history.len() + 1].eval(&ext)?;
        Ok(opcore::hermitian_part(&(wl_inv.adjoint() * e * wl_inv)))
    }

    pub fn l(&self, history: &[Flash]) -> Result<CMat> {
        if history.len() > self.n_max() + 1 {
            return Err(Error::InvalidParameter(
                "history longer than the available densities".into(),
            ));
        }
        let mut l = opcore::identity(self.densities[0].model.dim);
        for k in 0..history.len() {
            let past = &history[..k];
            check_bijective(&self.densities[k].eval(past)?, past)?;
            let w = self.w_given_l(past, &l, history[k].t)?;
            let lambda = self.lambda_given_l(past, &l, history[k])?;
            l = opcore::positive_sqrt(&lambda)? * w * l;
        }
        Ok(l)
    }

    pub fn w(&self, history: &[Flash], t: f64) -> Result<CMat> {
        let l = self.l(history)?;
        self.w_given_l(history, &l, t)
    }

    pub fn lambda(&self, history: &[Flash], z: Flash) -> Result<CMat> {
        let l = self.l(history)?;
        self.lambda_given_l(history, &l, z)
    }

    pub fn roundtrip_deviation(&self, histories: &[Vec<Flash>]) -> Result<f64> {
        roundtrip(&self.densities, histories, |f| self.l(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::grwf::corpus;
    use crate::grwf::model::{GrwfModel, Tier};
    use crate::grwf::propagator::{dyson_propagator, DYSON_TOL};
    use crate::grwf::space::ConfigSpace;
    use crate::opcore::CVec;
    use crate::povm::density_from_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn densities(model: &GrwfModel, up_to: usize) -> Vec<HistoryDensity> {
        (0..=up_to)
            .map(|n| density_from_model(model, n, 0.0))
            .collect()
    }

    fn histories(model: &GrwfModel, rng: &mut ChaCha8Rng) -> Vec<Vec<Flash>> {
        (0..=2)
            .flat_map(|n| (0..3).map(move |_| n))
            .map(|n| corpus::random_history(model, n, 0.0, rng))
            .collect()
    }

    #[test]
    fn empty_history_w_is_root_of_tail_integral() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = corpus::random_variable_rate(3, 2, &mut rng).unwrap();
        let r = reconstruct_sqrt_plus(densities(&m, 1)).unwrap();
        let t = 0.9;
        // Direct quadrature of 1 − ∫_0^t W*ΛW with a fine independent trapezoid rule.
        let steps = 20000;
        let mut integral = CMat::zeros(3, 3);
        for k in 0..=steps {
            let s = t * k as f64 / steps as f64;
            let w = opcore::matrix_exp(&m.generator(&[], 0.0), s);
            let f = w.adjoint() * m.total_rate(&[], 0.0) * w;
            let weight = if k == 0 || k == steps { 0.5 } else { 1.0 } * t / steps as f64;
            integral += f * C64::from(weight);
        }
        let expected =
            opcore::positive_sqrt(&opcore::hermitian_part(&(opcore::identity(3) - integral)))
                .unwrap();
        assert!(opcore::max_abs_diff(&r.w(&[], t).unwrap(), &expected) < 1e-7);
    }

    #[test]
    fn sqrt_plus_roundtrip_and_positivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for tier in [
            Tier::Simple,
            Tier::VariableRate,
            Tier::TimeDependent,
            Tier::PastDependent,
        ] {
            let m = corpus::random_model(tier, 3, 2, &mut rng).unwrap();
            let r = reconstruct_sqrt_plus(densities(&m, 3)).unwrap();
            let hs = histories(&m, &mut rng);
            assert!(r.roundtrip_deviation(&hs).unwrap() < 1e-7, "{tier:?}");
            let f = &hs[4];
            let z = Flash {
                q: 1,
                t: f[0].t + 0.3,
                label: 0,
            };
            let c = r.c(&f[..1], z).unwrap();
            assert!(opcore::min_eigenvalue(&c) > -1e-10);
            let w = r.w(&f[..1], z.t).unwrap();
            assert!(opcore::min_eigenvalue(&w) > -1e-10);
        }
    }

    #[test]
    fn reconstructed_rates_are_gauge_conjugates_of_the_originals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = corpus::random_simple(3, 3, 1.0, &mut rng).unwrap();
        let r = reconstruct_sqrt_plus(densities(&m, 1)).unwrap();
        let t = 0.8;
        let w0 = dyson_propagator(&m, &[], 0.0, t, DYSON_TOL).unwrap();
        let u = w0 * opcore::inverse(&r.w(&[], t).unwrap()).unwrap();
        assert!(opcore::unitarity_deviation(&u) < 1e-8);
        for q in 0..3 {
            let z = Flash { q, t, label: 0 };
            let expected = u.adjoint() * m.rate_op(&[], q, t, 0) * &u;
            assert!(opcore::max_abs_diff(&r.lambda(&[], z).unwrap(), &expected) < 1e-8);
        }
    }

    #[test]
    fn square_root_plus_model_is_a_fixed_point() {
        // H = 0 with commuting positive rates: W and C are already positive.
        let space = ConfigSpace::uniform(2, 2.0, 1).unwrap();
        let d =
            |a: f64, b: f64| CMat::from_diagonal(&CVec::from_vec(vec![C64::from(a), C64::from(b)]));
        let c = vec![d(0.5, 1.0), d(0.8, 0.3)];
        let m = GrwfModel::from_static(
            Tier::VariableRate,
            space,
            c.clone(),
            CMat::zeros(2, 2),
            None,
        )
        .unwrap();
        let r = reconstruct_sqrt_plus(densities(&m, 2)).unwrap();
        let f = vec![Flash {
            q: 1,
            t: 0.4,
            label: 0,
        }];
        let z = Flash {
            q: 0,
            t: 1.1,
            label: 0,
        };
        assert!(opcore::max_abs_diff(&r.c(&f, z).unwrap(), &c[0]) < 1e-7);
        let w = dyson_propagator(&m, &f, 0.4, 1.1, DYSON_TOL).unwrap();
        assert!(opcore::max_abs_diff(&r.w(&f, 1.1).unwrap(), &w) < 1e-7);
    }

    #[test]
    fn singular_density_is_reported() {
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
        let r = reconstruct_sqrt_plus(densities(&m, 2)).unwrap();
        let f = vec![
            Flash {
                q: 0,
                t: 0.5,
                label: 0,
            },
            Flash {
                q: 1,
                t: 0.9,
                label: 0,
            },
        ];
        assert!(matches!(r.l(&f), Err(Error::SingularDensity { .. })));
    }

    #[test]
    fn heisenberg_plus_w_of_constant_rate_is_scalar_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = corpus::random_simple(3, 3, 0.8, &mut rng).unwrap();
        let r = reconstruct_heisenberg_plus(densities(&m, 1), 0.05).unwrap();
        for t in [0.3f64, 1.2] {
            let expected = opcore::identity(3) * C64::from((-0.4 * t).exp());
            let got = r.w(&[], t).unwrap();
            assert!(
                opcore::max_abs_diff(&got, &expected) < 1e-8,
                "{got} {expected}"
            );
        }
    }

    #[test]
    fn heisenberg_plus_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for tier in [Tier::Labeled, Tier::VariableRate] {
            let m = corpus::random_model(tier, 3, 2, &mut rng).unwrap();
            let r = reconstruct_heisenberg_plus(densities(&m, 3), 0.05).unwrap();
            let hs = histories(&m, &mut rng);
            assert!(r.roundtrip_deviation(&hs).unwrap() < 1e-6, "{tier:?}");
        }
    }

    #[test]
    fn heisenberg_plus_w_with_commuting_time_dependent_rates() {
        // Λ(q, t) = (1 + ½ sin t)·D_q with diagonal D_q and H = 0: W = exp(−½∫Λ(𝒬)).
        let space = ConfigSpace::uniform(2, 2.0, 1).unwrap();
        let diag = [[0.6, 0.2], [0.3, 0.9]];
        let collapse = move |_: &[Flash], q: usize, t: f64, _: usize| {
            let a = (1.0 + 0.5 * t.sin()).sqrt();
            CMat::from_diagonal(&CVec::from_vec(vec![
                C64::from(a * diag[q][0]),
                C64::from(a * diag[q][1]),
            ]))
        };
        let m = GrwfModel::dynamic(
            Tier::TimeDependent,
            space,
            2,
            Arc::new(collapse),
            Arc::new(|_: &[Flash], _| CMat::zeros(2, 2)),
            true,
            false,
            None,
        )
        .unwrap();
        let r = reconstruct_heisenberg_plus(densities(&m, 1), 0.02).unwrap();
        let t: f64 = 1.7;
        let integral_a = t + 0.5 * (1.0 - t.cos());
        let totals = [0.36 + 0.09, 0.04 + 0.81];
        let expected = CMat::from_diagonal(&CVec::from_vec(
            totals
                .iter()
                .map(|s| C64::from((-0.5 * s * integral_a).exp()))
                .collect(),
        ));
        assert!(opcore::max_abs_diff(&r.w(&[], t).unwrap(), &expected) < 1e-8);
    }

    #[test]
    fn depth_is_limited_by_available_densities() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = corpus::random_simple(2, 2, 1.0, &mut rng).unwrap();
        assert!(reconstruct_sqrt_plus(densities(&m, 0)).is_err());
        let r = reconstruct_sqrt_plus(densities(&m, 1)).unwrap();
        let f = corpus::random_history(&m, 2, 0.0, &mut rng);
        assert!(r.l(&f).is_err());
        assert!(r.w(&f[..1], 5.0).is_err());
    }
}
