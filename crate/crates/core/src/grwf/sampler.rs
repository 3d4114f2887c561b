//! Sequential flash sampler: inverse-transform on the survival function,
//! then a discrete draw of the flash cell and label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grwf::model::GrwfModel;
use crate::grwf::propagator::{dyson_propagator, rate_scale, DYSON_TOL, LIMIT_TOL};
use crate::grwf::space::{last_time, Flash, FlashRecord};
use crate::opcore::{self, CMat, CVec, C64};

/// Norms of collapsed states at or below this are rejected.
pub const ZERO_NORM: f64 = 1e-14;
const MAX_DOUBLINGS: usize = 64;

/// ψ → cψ/‖cψ‖.
pub fn collapse(psi: &CVec, c: &CMat) -> Result<CVec> {
    let v = c * psi;
    let norm = opcore::norm_sq(&v).sqrt();
    if !(norm > ZERO_NORM) {
        return Err(Error::ZeroCollapseNorm { norm });
    }
    Ok(v / C64::from(norm))
}

/// When to stop a trajectory; at least one bound is required.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopRule {
    pub max_flashes: Option<usize>,
    pub t_max: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub seed: u64,
    pub stream: u64,
    pub t0: f64,
    pub psi0: CVec,
    pub flashes: Vec<FlashRecord>,
    pub psi_final: CVec,
}

impl Trajectory {
    pub fn flash_list(&self) -> Vec<Flash> {
        self.flashes
            .iter()
            .filter_map(|r| r.flash().copied())
            .collect()
    }
}

/// Outcome of one sampling step.
#[derive(Clone, Debug)]
pub enum Step {
    Flash {
        flash: Flash,
        state: CVec,
    },
    Cemetery,
    /// No flash before the horizon; carries the normalized state there.
    Horizon {
        state: CVec,
    },
}

/// e^{Gh} and its repeated squares for a generator that is constant after the last flash.
pub struct StepPowers {
    generator: CMat,
    h: f64,
    powers: Vec<CMat>,
}

impl StepPowers {
    pub fn new(generator: CMat, h: f64) -> Self {
        let first = opcore::matrix_exp(&generator, h);
        Self {
            generator,
            h,
            powers: vec![first],
        }
    }

    fn matches(&self, generator: &CMat, h: f64) -> bool {
        self.h == h && &self.generator == generator
    }

    /// e^{G j h} state, one product per set bit of j.
    pub fn advance(&mut self, state: &CVec, j: usize) -> CVec {
        let mut out = state.clone();
        let (mut rest, mut bit) = (j, 0);
        while rest > 0 {
            if bit == self.powers.len() {
                let last = &self.powers[bit - 1];
                self.powers.push(last * last);
            }
            if rest & 1 == 1 {
                out = &self.powers[bit] * out;
            }
            rest >>= 1;
            bit += 1;
        }
        out
    }
}

/// e^{Gτ}v by its Taylor series when ‖G‖_F τ ≤ 1/2; None for longer steps.
fn short_exp_action(g: &CMat, tau: f64, v: &CVec) -> Option<CVec> {
    if g.norm() * tau > 0.5 {
        return None;
    }
    let scale = opcore::norm_sq(v).sqrt();
    let mut term = v.clone();
    let mut sum = v.clone();
    for k in 1..40 {
        term = (g * term) * C64::from(tau / k as f64);
        sum += &term;
        if opcore::norm_sq(&term).sqrt() <= 1e-17 * scale {
            break;
        }
    }
    Some(sum)
}

/// W^b(f)·W^a(f)^{-1}, i.e. the propagator between two times after the last flash.
struct Segment<'a> {
    model: &'a GrwfModel,
    history: &'a [Flash],
    powers: Option<&'a mut StepPowers>,
}

impl Segment<'_> {
    fn propagate(&self, a: f64, b: f64, state: &CVec) -> Result<CVec> {
        if b <= a {
            return Ok(state.clone());
        }
        match &self.powers {
            Some(p) => Ok(short_exp_action(&p.generator, b - a, state)
                .unwrap_or_else(|| opcore::matrix_exp(&p.generator, b - a) * state)),
            None => Ok(dyson_propagator(self.model, self.history, a, b, DYSON_TOL)? * state),
        }
    }

    /// Propagation over j grid steps of length h from a.
    fn advance(&mut self, a: f64, j: usize, h: f64, state: &CVec) -> Result<CVec> {
        match &mut self.powers {
            Some(p) => Ok(p.advance(state, j)),
            None => self.propagate(a, a + j as f64 * h, state),
        }
    }
}

/// Survival-grid step: min(0.01/λ_max, (t_max − t0)/10⁴).
pub fn grid_step(model: &GrwfModel, history: &[Flash], t0: f64, t_max: Option<f64>) -> f64 {
    let start = last_time(history, t0);
    let h = 0.01 / rate_scale(model, history, start);
    match t_max {
        Some(tm) if tm > t0 => h.min((tm - t0) / 1e4),
        _ => h,
    }
}

/// Samples the next flash after the history, stopping at `t_max` if given.
pub fn sample_step<R: Rng + ?Sized>(
    model: &GrwfModel,
    history: &[Flash],
    t0: f64,
    psi: &CVec,
    rng: &mut R,
    t_max: Option<f64>,
) -> Result<Step> {
    sample_step_cached(model, history, t0, psi, rng, t_max, &mut None)
}

/// `sample_step` reusing the power table across steps with the same generator and grid.
fn sample_step_cached<R: Rng + ?Sized>(
    model: &GrwfModel,
    history: &[Flash],
    t0: f64,
    psi: &CVec,
    rng: &mut R,
    t_max: Option<f64>,
    cache: &mut Option<StepPowers>,
) -> Result<Step> {
    let start = last_time(history, t0);
    if let Some(tm) = t_max {
        if start >= tm {
            return Ok(Step::Horizon { state: psi.clone() });
        }
    }
    let h = grid_step(model, history, t0, t_max);
    let settle = 4.0 / rate_scale(model, history, start);
    let powers = if model.is_time_dependent() {
        None
    } else {
        let g = model.generator(history, start);
        if !cache.as_ref().is_some_and(|p| p.matches(&g, h)) {
            *cache = Some(StepPowers::new(g, h));
        }
        cache.as_mut()
    };
    let mut seg = Segment {
        model,
        history,
        powers,
    };
    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);

    // Bracket the crossing S(t) = u on doubling checkpoints.
    let (mut a, mut state_a, mut s_a) = (start, psi.clone(), 1.0);
    let (mut a_steps, mut b_steps) = (0usize, 1usize);
    let (b, steps, state_b, s_b) = 'bracket: {
        for _ in 0..MAX_DOUBLINGS {
            let mut b = start + b_steps as f64 * h;
            let capped = matches!(t_max, Some(tm) if b >= tm);
            let state_b = if capped {
                b = t_max.expect("capped implies horizon");
                seg.propagate(a, b, &state_a)?
            } else {
                seg.advance(a, b_steps - a_steps, h, &state_a)?
            };
            let s_b = opcore::norm_sq(&state_b);
            if s_b <= u {
                let steps = if capped {
                    ((b - a) / h).ceil().max(1.0) as usize
                } else {
                    b_steps - a_steps
                };
                break 'bracket (b, steps, state_b, s_b);
            }
            if capped {
                return Ok(Step::Horizon {
                    state: opcore::normalized(&state_b)?,
                });
            }
            if b - start >= settle && s_a - s_b < LIMIT_TOL {
                return Ok(Step::Cemetery);
            }
            a = b;
            state_a = state_b;
            s_a = s_b;
            a_steps = b_steps;
            b_steps *= 2;
        }
        return Err(Error::NonConvergence {
            what: "survival bracketing",
        });
    };

    // Bisection over the grid a + j h inside [a, b].
    let m = steps;
    let point = |j: usize| if j >= m { b } else { a + j as f64 * h };
    let (mut lo, mut hi) = (0usize, m);
    let (mut s_lo, mut s_hi) = (s_a, s_b);
    let (mut state_lo, mut state_hi) = (state_a.clone(), state_b);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let state_mid = seg.advance(a, mid, h, &state_a)?;
        let s_mid = opcore::norm_sq(&state_mid);
        if s_mid <= u {
            hi = mid;
            s_hi = s_mid;
            state_hi = state_mid;
        } else {
            lo = mid;
            s_lo = s_mid;
            state_lo = state_mid;
        }
    }
    let (t_lo, t_hi) = (point(lo), point(hi));
    let frac = if s_lo - s_hi > 0.0 {
        ((s_lo - u) / (s_lo - s_hi)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let t = t_lo + frac * (t_hi - t_lo);
    let state_t = if frac >= 1.0 {
        state_hi
    } else {
        seg.propagate(t_lo, t, &state_lo)?
    };
    let phi = opcore::normalized(&state_t)?;

    // Cell and label.
    let n_q = model.space.n_q();
    let mut weights = Vec::with_capacity(model.space.n_cells());
    let mut ops = Vec::with_capacity(model.space.n_cells());
    for label in 0..model.space.n_labels {
        for q in 0..n_q {
            let c = model.collapse_op(history, q, t, label);
            weights.push(opcore::norm_sq(&(&c * &phi)) * model.space.cell_weight);
            ops.push(c);
        }
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroCollapseNorm { norm: total });
    }
    let mut v = rng.random::<f64>() * total;
    let mut pick = weights.len() - 1;
    for (i, w) in weights.iter().enumerate() {
        if v < *w {
            pick = i;
            break;
        }
        v -= w;
    }
    while weights[pick] == 0.0 {
        pick -= 1;
    }
    let flash = Flash {
        q: pick % n_q,
        t,
        label: pick / n_q,
    };
    let state = collapse(&phi, &ops[pick])?;
    Ok(Step::Flash { flash, state })
}

/// One step without horizon: a flash with the collapsed state, or the cemetery
/// mark with the state unchanged.
pub fn sample_next_flash<R: Rng + ?Sized>(
    model: &GrwfModel,
    history: &[Flash],
    t0: f64,
    psi: &CVec,
    rng: &mut R,
) -> Result<(FlashRecord, CVec)> {
    match sample_step(model, history, t0, psi, rng, None)? {
        Step::Flash { flash, state } => Ok((FlashRecord::Flash(flash), state)),
        Step::Cemetery => Ok((FlashRecord::Cemetery, psi.clone())),
        Step::Horizon { .. } => unreachable!("no horizon was given"),
    }
}

/// Runs the sampler from (ψ0, t0) until the stop rule or the cemetery.
pub fn simulate<R: Rng + ?Sized>(
    model: &GrwfModel,
    psi0: &CVec,
    t0: f64,
    stop: StopRule,
    rng: &mut R,
) -> Result<Trajectory> {
    if stop.max_flashes.is_none() && stop.t_max.is_none() {
        return Err(Error::InvalidParameter(
            "stop rule needs max_flashes or t_max".into(),
        ));
    }
    if psi0.len() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            found: psi0.len(),
        });
    }
    let psi0 = opcore::normalized(psi0)?;
    let mut history: Vec<Flash> = Vec::new();
    let mut records = Vec::new();
    let mut psi = psi0.clone();
    let mut cache = None;
    loop {
        if stop.max_flashes.is_some_and(|m| history.len() >= m) {
            break;
        }
        match sample_step_cached(model, &history, t0, &psi, rng, stop.t_max, &mut cache)? {
            Step::Flash { flash, state } => {
                history.push(flash);
                records.push(FlashRecord::Flash(flash));
                psi = state;
            }
            Step::Cemetery => {
                records.push(FlashRecord::Cemetery);
                break;
            }
            Step::Horizon { state } => {
                psi = state;
                break;
            }
        }
    }
    Ok(Trajectory {
        seed: 0,
        stream: 0,
        t0,
        psi0,
        flashes: records,
        psi_final: psi,
    })
}

/// Independent stream `stream` of the master seed.
pub fn trajectory_rng(master_seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Simulates `n` trajectories on per-trajectory streams; results are in
/// trajectory order and do not depend on the thread count.
pub fn simulate_batch(
    model: &GrwfModel,
    psi0: &CVec,
    t0: f64,
    stop: StopRule,
    master_seed: u64,
    n: usize,
) -> Result<Vec<Trajectory>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(master_seed, i);
            let mut traj = simulate(model, psi0, t0, stop, &mut rng)?;
            traj.seed = master_seed;
            traj.stream = i;
            Ok(traj)
        })
        .collect()
}
