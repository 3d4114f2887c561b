//! Sequential sampling of relativistic flashes for several labels.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grwf::sampler::trajectory_rng;
use crate::opcore::C64;
use crate::rgrwf::dirac::{DiracLattice, Evolution, Field, LatticeSurface, Spinor, Surface};
use crate::rgrwf::flash::{apply_root_rate, LambdaSigma};
use crate::rgrwf::geometry::{tdist, SpacetimePoint};
use crate::rgrwf::RgrwfModel;

/// Largest total dimension of an explicitly stored tensor state.
pub const TENSOR_DIM_CAP: usize = 1 << 14;
/// Draws of s before giving up on a state whose surface norms vanish.
pub const MAX_SHELL_ATTEMPTS: usize = 10_000;

/// State on ⊗_i ℋ, one lattice field space per label.
#[derive(Clone, Debug, PartialEq)]
pub enum MultiState {
    Product(Vec<Field>),
    /// Row-major amplitudes over (label 0 index, label 1 index, ...), where a
    /// label index is 2·column + spin component.
    Tensor {
        n_labels: usize,
        site_dim: usize,
        data: Vec<C64>,
    },
}

impl MultiState {
    pub fn n_labels(&self) -> usize {
        match self {
            MultiState::Product(f) => f.len(),
            MultiState::Tensor { n_labels, .. } => *n_labels,
        }
    }

    pub fn tensor(n_labels: usize, site_dim: usize, data: Vec<C64>) -> Result<Self> {
        let total = site_dim
            .checked_pow(n_labels as u32)
            .filter(|&d| d <= TENSOR_DIM_CAP);
        match total {
            Some(d) if d == data.len() && site_dim.is_multiple_of(2) => Ok(MultiState::Tensor {
                n_labels,
                site_dim,
                data,
            }),
            Some(d) => Err(Error::DimensionMismatch {
                expected: d,
                found: data.len(),
            }),
            None => Err(Error::InvalidParameter(format!(
                "tensor dimension exceeds the cap {TENSOR_DIM_CAP}"
            ))),
        }
    }

    /// Explicit tensor of a product state.
    pub fn tensor_from_product(fields: &[Field]) -> Result<Self> {
        let site_dim = 2 * fields.first().map_or(0, |f| f.len());
        let mut data = vec![C64::from(1.0)];
        for f in fields {
            let flat: Vec<C64> = f.iter().flat_map(|v| [v[0], v[1]]).collect();
            data = data
                .iter()
                .flat_map(|a| flat.iter().map(move |b| a * b))
                .collect();
        }
        Self::tensor(fields.len(), site_dim, data)
    }

    /// Fields of label i, one per value of the other labels' indices.
    fn bundle(&self, label: usize) -> Vec<Field> {
        match self {
            MultiState::Product(f) => vec![f[label].clone()],
            MultiState::Tensor {
                n_labels,
                site_dim,
                data,
            } => {
                let (d, stride) = (*site_dim, site_dim.pow((n_labels - 1 - label) as u32));
                let outer = site_dim.pow(label as u32);
                let mut out = Vec::with_capacity(outer * stride);
                for o in 0..outer {
                    for inner in 0..stride {
                        out.push(
                            (0..d / 2)
                                .map(|c| {
                                    let at = |k: usize| data[o * d * stride + k * stride + inner];
                                    Spinor::new(at(2 * c), at(2 * c + 1))
                                })
                                .collect(),
                        );
                    }
                }
                out
            }
        }
    }

    /// Measure of the other labels' lattice sums, which a bundle norm omits.
    fn bundle_measure(&self, dx: f64) -> f64 {
        match self {
            MultiState::Product(_) => 1.0,
            MultiState::Tensor { n_labels, .. } => dx.powi(*n_labels as i32 - 1),
        }
    }

    fn set_bundle(&mut self, label: usize, bundle: Vec<Field>) {
        match self {
            MultiState::Product(f) => {
                f[label] = bundle
                    .into_iter()
                    .next()
                    .expect("product bundles hold one field")
            }
            MultiState::Tensor {
                n_labels,
                site_dim,
                data,
            } => {
                let (d, stride) = (*site_dim, site_dim.pow((*n_labels - 1 - label) as u32));
                for (r, field) in bundle.iter().enumerate() {
                    let (o, inner) = (r / stride, r % stride);
                    for (c, v) in field.iter().enumerate() {
                        data[o * d * stride + 2 * c * stride + inner] = v[0];
                        data[o * d * stride + (2 * c + 1) * stride + inner] = v[1];
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RgrwfFlash {
    pub label: usize,
    /// 1 for the first flash after the seed.
    pub k: usize,
    pub point: SpacetimePoint,
    /// Timelike distance from the label's previous flash.
    pub tau: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SamplerDiagnostics {
    pub max_boundary_mass: f64,
    pub max_edge_mass: f64,
    pub rejected_shells: usize,
    /// Shells whose lattice norm exceeded one and was capped.
    pub capped_shells: usize,
}

/// Sampler state: the multi-label state on each label's current reference line.
#[derive(Clone, Debug)]
pub struct RgrwfSampler<'a> {
    pub model: &'a RgrwfModel,
    pub lattice: &'a DiracLattice,
    pub origin: f64,
    pub state: MultiState,
    pub last: Vec<SpacetimePoint>,
    /// Reference line of each label as a slice index counted from `origin`.
    pub reference: Vec<usize>,
    pub counts: Vec<usize>,
    pub diagnostics: SamplerDiagnostics,
}

impl<'a> RgrwfSampler<'a> {
    pub fn new(
        model: &'a RgrwfModel,
        lattice: &'a DiracLattice,
        origin: f64,
        seeds: &[SpacetimePoint],
        state: MultiState,
    ) -> Result<Self> {
        model.validate()?;
        if seeds.len() != model.n_labels || state.n_labels() != model.n_labels {
            return Err(Error::DimensionMismatch {
                expected: model.n_labels,
                found: seeds.len().min(state.n_labels()),
            });
        }
        if let Some(s) = seeds.iter().find(|s| !s.is_finite() || s.t < origin) {
            return Err(Error::InvalidParameter(format!(
                "seed ({}, {}) lies before the reference line t = {origin}",
                s.t, s.x
            )));
        }
        match &state {
            MultiState::Product(f) if f.iter().any(|f| f.len() != lattice.n_x) => {
                return Err(Error::DimensionMismatch {
                    expected: lattice.n_x,
                    found: f.iter().map(|f| f.len()).min().unwrap_or(0),
                });
            }
            MultiState::Tensor { site_dim, .. } if *site_dim != 2 * lattice.n_x => {
                return Err(Error::DimensionMismatch {
                    expected: 2 * lattice.n_x,
                    found: *site_dim,
                });
            }
            _ => {}
        }
        let mut sampler = Self {
            model,
            lattice,
            origin,
            state,
            last: seeds.to_vec(),
            reference: vec![0; model.n_labels],
            counts: vec![0; model.n_labels],
            diagnostics: SamplerDiagnostics::default(),
        };
        sampler.normalize_all()?;
        Ok(sampler)
    }

    fn normalize_all(&mut self) -> Result<()> {
        match &mut self.state {
            MultiState::Product(fields) => {
                for f in fields.iter_mut() {
                    scale_to_unit(f, self.lattice)?;
                }
            }
            MultiState::Tensor { data, .. } => {
                let n: f64 = data.iter().map(|z| z.norm_sqr()).sum::<f64>()
                    * self.lattice.dx.powi(self.model.n_labels as i32);
                if !(n > 0.0) || !n.is_finite() {
                    return Err(Error::ZeroCollapseNorm { norm: n });
                }
                let k = C64::from(1.0 / n.sqrt());
                data.iter_mut().for_each(|z| *z *= k);
            }
        }
        Ok(())
    }

    fn surface(&self, label: usize, s: f64) -> Result<LatticeSurface> {
        self.lattice
            .hyperboloid(self.last[label], s, self.model.window)
    }

    fn evolutions(&self, label: usize) -> Result<Vec<Evolution<'a>>> {
        let t_ref = self.origin + self.reference[label] as f64 * self.lattice.dt;
        self.state
            .bundle(label)
            .into_iter()
            .map(|f| Evolution::new(self.lattice, t_ref, f))
            .collect()
    }

    fn restrict_all(
        evs: &mut [Evolution<'a>],
        surface: &LatticeSurface,
    ) -> Result<Vec<crate::rgrwf::dirac::SurfaceState>> {
        evs.par_iter_mut().map(|ev| ev.restrict(surface)).collect()
    }

    /// Samples the next flash of `label` and applies its collapse.
    pub fn next_flash<R: Rng + ?Sized>(&mut self, label: usize, rng: &mut R) -> Result<RgrwfFlash> {
        let exp =
            Exp::new(self.model.lambda).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let mut evs = self.evolutions(label)?;
        for _ in 0..MAX_SHELL_ATTEMPTS {
            let s = exp.sample(rng);
            if s <= 0.0 {
                continue;
            }
            let surface = self.surface(label, s)?;
            let states = Self::restrict_all(&mut evs, &surface)?;
            let norm: f64 = states.iter().map(|st| st.norm_sq()).sum::<f64>()
                * self.state.bundle_measure(self.lattice.dx);
            if norm > 1.0 {
                self.diagnostics.capped_shells += 1;
            }
            if rng.random::<f64>() >= norm {
                self.diagnostics.rejected_shells += 1;
                continue;
            }
            let Surface::Hyperboloid(hyp) = &surface.surface else {
                unreachable!()
            };
            let rates = LambdaSigma::new(hyp, self.model.profile, self.model.lambda);
            let mut dens = vec![0.0; surface.len()];
            for st in &states {
                for (d, x) in dens.iter_mut().zip(st.densities()) {
                    *d += x;
                }
            }
            let p = rates.surface_density(&dens);
            let index = WeightedIndex::new(&p)
                .map_err(|_| Error::ZeroCollapseNorm { norm })?
                .sample(rng);
            let point = hyp.point(index);
            let edge = states.iter().map(|st| st.edge_mass()).sum::<f64>();
            self.collapse(label, &mut evs, states, &rates, index, s)?;
            self.diagnostics.max_edge_mass = self.diagnostics.max_edge_mass.max(edge);
            return self.record(label, point, s);
        }
        Err(Error::NonConvergence {
            what: "shell sampling",
        })
    }

    /// Applies the collapse for a flash at grid point `index` of ℍ_s(last flash).
    fn collapse(
        &mut self,
        label: usize,
        evs: &mut [Evolution<'a>],
        states: Vec<crate::rgrwf::dirac::SurfaceState>,
        rates: &LambdaSigma,
        index: usize,
        s: f64,
    ) -> Result<()> {
        let weights = rates.weights_at_index(index);
        let new_ref_abs =
            ((self.last[label].t + s - self.origin) / self.lattice.dt + 1e-9).floor() as usize;
        let new_ref_abs = new_ref_abs.max(self.reference[label]);
        let target = new_ref_abs - self.reference[label];
        let mut bundle: Vec<Field> = evs
            .par_iter_mut()
            .zip(states)
            .map(|(ev, mut st)| {
                apply_root_rate(&mut st, &weights, self.model.lambda, s);
                ev.pull_back(&st, target)
            })
            .collect::<Result<_>>()?;
        let boundary = evs.iter().map(|e| e.boundary_mass()).fold(0.0, f64::max);
        self.diagnostics.max_boundary_mass = self.diagnostics.max_boundary_mass.max(boundary);
        let norm: f64 = bundle.iter().map(|f| self.lattice.norm_sq(f)).sum::<f64>()
            * self.state.bundle_measure(self.lattice.dx);
        if !(norm > 1e-300) || !norm.is_finite() {
            return Err(Error::ZeroCollapseNorm { norm });
        }
        let k = C64::from(1.0 / norm.sqrt());
        bundle.iter_mut().flatten().for_each(|v| *v *= k);
        self.state.set_bundle(label, bundle);
        self.reference[label] = new_ref_abs;
        Ok(())
    }

    fn record(&mut self, label: usize, point: SpacetimePoint, s: f64) -> Result<RgrwfFlash> {
        debug_assert!(tdist(&point, &self.last[label]).is_ok_and(|d| d > 0.0));
        self.counts[label] += 1;
        self.last[label] = point;
        Ok(RgrwfFlash {
            label,
            k: self.counts[label],
            point,
            tau: s,
        })
    }

    /// Collapses on a prescribed flash at `point`, which must be a grid point
    /// of a lattice hyperboloid based at the label's previous flash.
    pub fn condition_on(&mut self, label: usize, point: SpacetimePoint) -> Result<RgrwfFlash> {
        let s = tdist(&point, &self.last[label])?;
        if s <= 0.0 {
            return Err(Error::NotInFuture);
        }
        let surface = self.surface(label, s)?;
        let Surface::Hyperboloid(hyp) = &surface.surface else {
            unreachable!()
        };
        let u = hyp.locate(&point)?;
        let index = ((u - hyp.u_first) / hyp.du).round();
        if index < 0.0 || index as usize >= hyp.n || (hyp.u(index as usize) - u).abs() > 1e-9 {
            return Err(Error::OffSurface {
                mismatch: u - hyp.u(index.max(0.0) as usize),
            });
        }
        let rates = LambdaSigma::new(hyp, self.model.profile, self.model.lambda);
        let mut evs = self.evolutions(label)?;
        let states = Self::restrict_all(&mut evs, &surface)?;
        self.collapse(label, &mut evs, states, &rates, index as usize, s)?;
        self.record(label, hyp.point(index as usize), s)
    }
}

fn scale_to_unit(f: &mut Field, lattice: &DiracLattice) -> Result<()> {
    let n = lattice.norm_sq(f);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::ZeroCollapseNorm { norm: n });
    }
    let k = C64::from(1.0 / n.sqrt());
    f.iter_mut().for_each(|v| *v *= k);
    Ok(())
}

#[derive(Clone, Debug)]
pub struct RgrwfTrajectory {
    pub flashes: Vec<RgrwfFlash>,
    pub diagnostics: SamplerDiagnostics,
}

impl RgrwfTrajectory {
    pub fn of_label(&self, label: usize) -> impl Iterator<Item = &RgrwfFlash> {
        self.flashes.iter().filter(move |f| f.label == label)
    }
}

/// n flashes per label, labels visited round-robin.
pub fn sample_rgrwf<R: Rng + ?Sized>(
    model: &RgrwfModel,
    lattice: &DiracLattice,
    origin: f64,
    seeds: &[SpacetimePoint],
    state: MultiState,
    n_per_label: usize,
    rng: &mut R,
) -> Result<RgrwfTrajectory> {
    let mut sampler = RgrwfSampler::new(model, lattice, origin, seeds, state)?;
    let mut flashes = Vec::with_capacity(n_per_label * model.n_labels);
    for _ in 0..n_per_label {
        for label in 0..model.n_labels {
            flashes.push(sampler.next_flash(label, rng)?);
        }
    }
    Ok(RgrwfTrajectory {
        flashes,
        diagnostics: sampler.diagnostics,
    })
}

/// Independent trajectories, trajectory j driven by stream j of the master seed.
#[allow(clippy::too_many_arguments)]
pub fn sample_rgrwf_batch(
    model: &RgrwfModel,
    lattice: &DiracLattice,
    origin: f64,
    seeds: &[SpacetimePoint],
    state: &MultiState,
    n_per_label: usize,
    master_seed: u64,
    n_trajectories: usize,
) -> Result<Vec<RgrwfTrajectory>> {
    (0..n_trajectories)
        .into_par_iter()
        .map(|j| {
            let mut rng = trajectory_rng(master_seed, j as u64);
            sample_rgrwf(
                model,
                lattice,
                origin,
                seeds,
                state.clone(),
                n_per_label,
                &mut rng,
            )
        })
        .collect()
}
