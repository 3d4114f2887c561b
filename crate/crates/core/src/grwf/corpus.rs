//! Random models of every tier, used by tests, presets and the CLI checks.

use std::sync::Arc;

use rand::Rng;

use crate::error::Result;
use crate::grwf::builders::normalize_family;
use crate::grwf::model::{GrwfModel, Tier};
use crate::grwf::space::{ConfigSpace, Flash};
use crate::opcore::{self, CMat, CVec, C64, I};

pub fn random_matrix(d: usize, rng: &mut (impl Rng + ?Sized)) -> CMat {
    CMat::from_fn(d, d, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

pub fn random_hermitian(d: usize, rng: &mut (impl Rng + ?Sized)) -> CMat {
    opcore::hermitian_part(&random_matrix(d, rng))
}

/// B*B/d + δI with a random B; positive definite.
pub fn random_positive(d: usize, rng: &mut (impl Rng + ?Sized)) -> CMat {
    let b = random_matrix(d, rng);
    opcore::hermitian_part(&(b.adjoint() * b)) / C64::from(d as f64)
        + opcore::identity(d) * C64::from(0.05)
}

pub fn random_unitary(d: usize, rng: &mut (impl Rng + ?Sized)) -> CMat {
    opcore::matrix_exp(&(random_hermitian(d, rng) * -I), 2.0)
}

pub fn random_state(d: usize, rng: &mut (impl Rng + ?Sized)) -> CVec {
    let v = CVec::from_fn(d, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    opcore::normalized(&v).expect("random vector is nonzero")
}

fn unit_space(n_q: usize, n_labels: usize) -> ConfigSpace {
    ConfigSpace::uniform(n_q, n_q as f64, n_labels).expect("valid space")
}

/// Random positive family normalized to λI, collapse operators Λ^{1/2}.
pub fn random_labeled(
    dim: usize,
    n_q: usize,
    n_labels: usize,
    lambda: f64,
    rng: &mut (impl Rng + ?Sized),
) -> Result<GrwfModel> {
    let space = unit_space(n_q, n_labels);
    let raw: Vec<CMat> = (0..space.n_cells())
        .map(|_| random_positive(dim, rng))
        .collect();
    let rates = normalize_family(&raw, space.cell_weight, lambda)?;
    let collapse = rates
        .iter()
        .map(opcore::positive_sqrt)
        .collect::<Result<Vec<_>>>()?;
    let tier = if n_labels == 1 {
        Tier::Simple
    } else {
        Tier::Labeled
    };
    GrwfModel::from_static(
        tier,
        space,
        collapse,
        random_hermitian(dim, rng),
        Some(lambda),
    )
}

pub fn random_simple(
    dim: usize,
    n_q: usize,
    lambda: f64,
    rng: &mut (impl Rng + ?Sized),
) -> Result<GrwfModel> {
    random_labeled(dim, n_q, 1, lambda, rng)
}

/// Unnormalized positive rates with a bijective total.
pub fn random_variable_rate(
    dim: usize,
    n_q: usize,
    rng: &mut (impl Rng + ?Sized),
) -> Result<GrwfModel> {
    let space = unit_space(n_q, 1);
    let collapse = (0..n_q)
        .map(|_| opcore::positive_sqrt(&(random_positive(dim, rng) * C64::from(1.5 / n_q as f64))))
        .collect::<Result<Vec<_>>>()?;
    GrwfModel::from_static(
        Tier::VariableRate,
        space,
        collapse,
        random_hermitian(dim, rng),
        None,
    )
}

/// Variable-rate model whose total rate has a kernel invariant under H, so
/// the stopping probability is nonzero.
pub fn random_stopping(dim: usize, n_q: usize, rng: &mut (impl Rng + ?Sized)) -> Result<GrwfModel> {
    assert!(dim >= 2, "needs a flashing block and a dark state");
    let space = unit_space(n_q, 1);
    let block = dim - 1;
    let embed = |m: &CMat| {
        let mut out = CMat::zeros(dim, dim);
        out.view_mut((0, 0), (block, block)).copy_from(m);
        out
    };
    let collapse = (0..n_q)
        .map(|_| {
            opcore::positive_sqrt(&embed(
                &(random_positive(block, rng) * C64::from(1.5 / n_q as f64)),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut h = embed(&random_hermitian(block, rng));
    h[(dim - 1, dim - 1)] = C64::from(rng.random_range(-1.0..1.0));
    GrwfModel::from_static(Tier::VariableRate, space, collapse, h, None)
}

/// Λ(q, t) = a_q(t)·V(t)*Λ_0(q)V(t) and H(t) = H_0 + cos(ω t)·H_1; C(q, t) = Λ(q, t)^{1/2}.
pub fn random_time_dependent(
    dim: usize,
    n_q: usize,
    rng: &mut (impl Rng + ?Sized),
) -> Result<GrwfModel> {
    let space = unit_space(n_q, 1);
    let roots: Vec<CMat> = (0..n_q)
        .map(|_| opcore::positive_sqrt(&(random_positive(dim, rng) * C64::from(1.5 / n_q as f64))))
        .collect::<Result<Vec<_>>>()?;
    let phases: Vec<f64> = (0..n_q)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let omega = rng.random_range(0.5..2.0);
    let k = random_hermitian(dim, rng) * C64::from(0.5);
    let h0 = random_hermitian(dim, rng);
    let h1 = random_hermitian(dim, rng) * C64::from(0.5);
    let collapse = move |_: &[Flash], q: usize, t: f64, _: usize| {
        let v = opcore::matrix_exp(&(&k * -I), t);
        let a = 1.0 + 0.5 * (omega * t + phases[q]).sin();
        v.adjoint() * &roots[q] * v * C64::from(a.sqrt())
    };
    let hamiltonian = move |_: &[Flash], t: f64| &h0 + &h1 * C64::from((omega * t).cos());
    GrwfModel::dynamic(
        Tier::TimeDependent,
        space,
        dim,
        Arc::new(collapse),
        Arc::new(hamiltonian),
        true,
        false,
        None,
    )
}

/// C(f, q) = U(f)·Λ_0(q)^{1/2}·V(f) and H(f) = H_0 + n·H_1, with unitaries
/// depending on the cells of the past flashes. With `time_dependent` an
/// extra factor (1 + ½ sin t)^{1/2} multiplies C.
pub fn random_past_dependent(
    dim: usize,
    n_q: usize,
    time_dependent: bool,
    rng: &mut (impl Rng + ?Sized),
) -> Result<GrwfModel> {
    let space = unit_space(n_q, 1);
    let roots: Vec<CMat> = (0..n_q)
        .map(|_| opcore::positive_sqrt(&(random_positive(dim, rng) * C64::from(1.5 / n_q as f64))))
        .collect::<Result<Vec<_>>>()?;
    let ku = random_hermitian(dim, rng);
    let kv = random_hermitian(dim, rng) * C64::from(0.7);
    let h0 = random_hermitian(dim, rng);
    let h1 = random_hermitian(dim, rng) * C64::from(0.4);
    let history_angle = |f: &[Flash]| f.iter().map(|z| 0.3 + 0.25 * z.q as f64).sum::<f64>();
    let collapse = move |f: &[Flash], q: usize, t: f64, _: usize| {
        let theta = history_angle(f);
        let u = opcore::matrix_exp(&(&ku * -I), 1.0 + theta);
        let v = opcore::matrix_exp(&(&kv * -I), theta);
        let c = u * &roots[q] * v;
        if time_dependent {
            c * C64::from((1.0 + 0.5 * t.sin()).sqrt())
        } else {
            c
        }
    };
    let hamiltonian = move |f: &[Flash], _: f64| &h0 + &h1 * C64::from(f.len() as f64);
    GrwfModel::dynamic(
        Tier::PastDependent,
        space,
        dim,
        Arc::new(collapse),
        Arc::new(hamiltonian),
        time_dependent,
        true,
        None,
    )
}

/// One random model of the given tier.
pub fn random_model(
    tier: Tier,
    dim: usize,
    n_q: usize,
    rng: &mut (impl Rng + ?Sized),
) -> Result<GrwfModel> {
    match tier {
        Tier::Simple => random_simple(dim, n_q, 1.0, rng),
        Tier::Labeled => random_labeled(dim, n_q, 2, 1.0, rng),
        Tier::VariableRate => random_variable_rate(dim, n_q, rng),
        Tier::TimeDependent => random_time_dependent(dim, n_q, rng),
        Tier::PastDependent => random_past_dependent(dim, n_q, false, rng),
    }
}

/// A random strictly time-ordered history of `n` flashes after `t0`.
pub fn random_history(
    model: &GrwfModel,
    n: usize,
    t0: f64,
    rng: &mut (impl Rng + ?Sized),
) -> Vec<Flash> {
    let mut t = t0;
    (0..n)
        .map(|_| {
            t += rng.random_range(0.05..1.0);
            Flash {
                q: rng.random_range(0..model.space.n_q()),
                t,
                label: rng.random_range(0..model.space.n_labels),
            }
        })
        .collect()
}
