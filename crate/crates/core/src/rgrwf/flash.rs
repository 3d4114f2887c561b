//! Flash-rate operators on hyperboloids, K operators and the K*K check.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::opcore::C64;
use crate::quad;
use crate::rgrwf::dirac::{DiracLattice, Evolution, Field, LatticeSurface, Surface, SurfaceState};
use crate::rgrwf::geometry::{tdist, Hyperboloid, SpacetimePoint};
use crate::rgrwf::{Profile, RgrwfModel};

/// Λ_Σ(x) on a sampled hyperboloid, with the normalizer 𝒩 fixed per point so
/// that the grid sum of Δμ(x)·Λ_Σ(x) is exactly λ.
#[derive(Clone, Debug)]
pub struct LambdaSigma {
    pub lambda: f64,
    pub profile: Profile,
    pub hyperboloid: Hyperboloid,
    arc: Vec<f64>,
    measure: Vec<f64>,
    normalizer: Vec<f64>,
    /// ℓ(sdist) between grid points, row-major.
    kernel: Vec<f64>,
}

impl LambdaSigma {
    pub fn new(hyperboloid: &Hyperboloid, profile: Profile, lambda: f64) -> Self {
        let h = hyperboloid.clone();
        let arc: Vec<f64> = (0..h.n).map(|j| h.arc_coordinate(h.u(j))).collect();
        let measure: Vec<f64> = (0..h.n).map(|j| h.measure(j)).collect();
        let n = h.n;
        let mut kernel = vec![0.0; n * n];
        for a in 0..n {
            for b in a..n {
                let v = profile.value(arc[a] - arc[b]);
                kernel[a * n + b] = v;
                kernel[b * n + a] = v;
            }
        }
        let normalizer = (0..n)
            .map(|b| 1.0 / (0..n).map(|a| measure[a] * kernel[a * n + b]).sum::<f64>())
            .collect();
        Self {
            lambda,
            profile,
            hyperboloid: h,
            arc,
            measure,
            normalizer,
            kernel,
        }
    }

    pub fn len(&self) -> usize {
        self.arc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arc.is_empty()
    }

    pub fn normalizer(&self, j: usize) -> f64 {
        self.normalizer[j]
    }

    fn weights_at_arc(&self, eta: f64) -> Vec<f64> {
        self.arc
            .iter()
            .zip(&self.normalizer)
            .map(|(eb, nb)| self.lambda * nb * self.profile.value(eta - eb))
            .collect()
    }

    /// Multiplication weights λ𝒩(y)ℓ(sdist(x, y)) for the grid point a.
    pub fn weights_at_index(&self, a: usize) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|b| self.lambda * self.normalizer[b] * self.kernel[a * n + b])
            .collect()
    }

    /// Weights for an arbitrary point x of the surface.
    pub fn weights_at(&self, x: &SpacetimePoint) -> Result<Vec<f64>> {
        let u = self.hyperboloid.locate(x)?;
        Ok(self.weights_at_arc(self.hyperboloid.arc_coordinate(u)))
    }

    /// max_y |Σ_x Δμ(x)·weight_x(y) − λ|.
    pub fn resolution_deviation(&self) -> f64 {
        (0..self.len())
            .map(|b| {
                let n = self.len();
                let sum: f64 = (0..n)
                    .map(|a| {
                        self.measure[a] * self.lambda * self.normalizer[b] * self.kernel[a * n + b]
                    })
                    .sum();
                (sum - self.lambda).abs()
            })
            .fold(0.0, f64::max)
    }

    /// p(x_a) = Δμ_a Σ_b weight_a(b)·dens_b, where dens_b already carries Δμ_b.
    pub fn surface_density(&self, dens: &[f64]) -> Vec<f64> {
        let n = self.len();
        let scaled: Vec<f64> = (0..n)
            .map(|b| self.lambda * self.normalizer[b] * dens[b])
            .collect();
        (0..n)
            .map(|a| {
                let row = &self.kernel[a * n..(a + 1) * n];
                self.measure[a] * row.iter().zip(&scaled).map(|(k, d)| k * d).sum::<f64>()
            })
            .collect()
    }
}

pub fn damping(lambda: f64, tau: f64) -> f64 {
    (-0.5 * lambda * tau).exp()
}

fn hyperboloid_of(surface: &LatticeSurface) -> &Hyperboloid {
    match &surface.surface {
        Surface::Hyperboloid(h) => h,
        Surface::Line { .. } => unreachable!("lattice hyperboloids are built as hyperboloids"),
    }
}

/// Multiplies surface values by e^{−λs/2}·√weights.
pub fn apply_root_rate(state: &mut SurfaceState, weights: &[f64], lambda: f64, s: f64) {
    let damp = damping(lambda, s);
    for (v, w) in state.values.iter_mut().zip(weights) {
        *v *= C64::from(damp * w.sqrt());
    }
}

/// K_{x′}(x)ψ for ψ given on the line t = origin; the result lives on the same line.
/// Zero when x is not in the open future of x′ (the light cone has measure zero).
pub fn k_operator(
    model: &RgrwfModel,
    lattice: &DiracLattice,
    x_prime: &SpacetimePoint,
    x: &SpacetimePoint,
    psi: &Field,
    origin: f64,
) -> Result<Field> {
    let s = match tdist(x, x_prime) {
        Ok(s) if s > 0.0 => s,
        _ => return Ok(vec![crate::rgrwf::dirac::Spinor::zeros(); psi.len()]),
    };
    if x_prime.t < origin {
        return Err(Error::LatticeHorizon(format!(
            "base point time {} precedes the reference line {origin}",
            x_prime.t
        )));
    }
    let surface = lattice.hyperboloid(*x_prime, s, model.window)?;
    let rates = LambdaSigma::new(hyperboloid_of(&surface), model.profile, model.lambda);
    let weights = rates.weights_at(x)?;
    let mut ev = Evolution::new(lattice, origin, psi.clone())?;
    let mut state = ev.restrict(&surface)?;
    apply_root_rate(&mut state, &weights, model.lambda, s);
    ev.pull_back(&state, 0)
}

#[derive(Clone, Debug)]
pub struct KkReport {
    pub s_max: f64,
    pub value: f64,
    pub target: f64,
    pub deviation: f64,
    pub shells: usize,
    pub boundary_mass: f64,
    pub max_edge_mass: f64,
    pub max_resolution_deviation: f64,
}

/// Panels and nodes per panel of the default shell rule (256 shells).
pub const SHELL_PANELS: usize = 32;
pub const SHELL_NODES: usize = 8;

/// ∫₀^{s_max} ds e^{−λs} Σ_x Δμ_x ⟨Uψ|Λ_Σ(x)|Uψ⟩_Σ over hyperboloid shells.
pub fn check_kk_normalization(
    model: &RgrwfModel,
    lattice: &DiracLattice,
    x_prime: &SpacetimePoint,
    psi: &Field,
    origin: f64,
    s_max: f64,
) -> Result<KkReport> {
    let target = 1.0 - (-model.lambda * s_max).exp();
    if s_max <= 0.0 {
        return Ok(KkReport {
            s_max,
            value: 0.0,
            target,
            deviation: target.abs(),
            shells: 0,
            boundary_mass: 0.0,
            max_edge_mass: 0.0,
            max_resolution_deviation: 0.0,
        });
    }
    let (nodes, weights) = quad::geometric_composite(0.0, s_max, SHELL_PANELS, SHELL_NODES, 1.1);
    let mut ev = Evolution::new(lattice, origin, psi.clone())?;
    let top = lattice.hyperboloid(*x_prime, s_max, model.window)?;
    ev.ensure_time(top.max_time())?;
    let ev = &ev;
    let shells: Vec<(f64, f64, f64)> = nodes
        .par_iter()
        .zip(&weights)
        .map(|(&s, &w)| -> Result<(f64, f64, f64)> {
            let surface = lattice.hyperboloid(*x_prime, s, model.window)?;
            let state = ev.interpolate(&surface)?;
            let rates = LambdaSigma::new(hyperboloid_of(&surface), model.profile, model.lambda);
            let dens = state.densities();
            let shell: f64 = rates.surface_density(&dens).iter().sum();
            Ok((
                w * (-model.lambda * s).exp() * shell,
                state.edge_mass(),
                rates.resolution_deviation(),
            ))
        })
        .collect::<Result<_>>()?;
    let value: f64 = shells.iter().map(|c| c.0).sum();
    Ok(KkReport {
        s_max,
        value,
        target,
        deviation: (value - target).abs(),
        shells: nodes.len(),
        boundary_mass: ev.boundary_mass(),
        max_edge_mass: shells.iter().map(|c| c.1).fold(0.0, f64::max),
        max_resolution_deviation: shells.iter().map(|c| c.2).fold(0.0, f64::max),
    })
}
