//! Crank–Nicolson lattice for the 1+1 Dirac equation and restriction of its
//! solutions to constant-time lines and hyperboloids.
//!
//! Conventions: γ⁰ = σ³, γ¹ = iσ², so i∂_tψ = (−iσ¹∂_x + mσ³ + V)ψ and the
//! flux form on a surface with future normal n is ψ*(n⁰ − n¹σ¹)ψ.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::opcore::{C64, I};
use crate::rgrwf::geometry::{Hyperboloid, SpacetimePoint};

pub type Spinor = Vector2<C64>;
pub type Field = Vec<Spinor>;

/// Fraction of the box on each side counted as boundary region.
pub const BOUNDARY_FRACTION: f64 = 0.1;

/// Static external potential V(x) (the A₀ component).
#[derive(Clone, Debug, PartialEq)]
pub enum Potential {
    Free,
    /// V(x) = −depth · exp(−(x − center)²/(2 width²)).
    GaussianWell {
        depth: f64,
        center: f64,
        width: f64,
    },
}

impl Potential {
    pub fn at(&self, x: f64) -> f64 {
        match *self {
            Potential::Free => 0.0,
            Potential::GaussianWell {
                depth,
                center,
                width,
            } => -depth * (-(x - center).powi(2) / (2.0 * width * width)).exp(),
        }
    }
}

fn sigma1() -> Matrix2<C64> {
    Matrix2::new(
        C64::from(0.0),
        C64::from(1.0),
        C64::from(1.0),
        C64::from(0.0),
    )
}

/// Block-tridiagonal operator with constant off-diagonal blocks, factorized
/// for the block Thomas algorithm.
#[derive(Clone, Debug)]
struct BandOperator {
    diag: Vec<Matrix2<C64>>,
    lower: Matrix2<C64>,
    upper: Matrix2<C64>,
    pivots_inv: Vec<Matrix2<C64>>,
    sweep: Vec<Matrix2<C64>>,
}

impl BandOperator {
    fn new(diag: Vec<Matrix2<C64>>, lower: Matrix2<C64>, upper: Matrix2<C64>) -> Result<Self> {
        let n = diag.len();
        let mut pivots_inv = Vec::with_capacity(n);
        let mut sweep = Vec::with_capacity(n);
        for k in 0..n {
            let m = if k == 0 {
                diag[0]
            } else {
                diag[k] - lower * sweep[k - 1]
            };
            let inv = m
                .try_inverse()
                .ok_or(Error::Singular { min_singular: 0.0 })?;
            sweep.push(inv * upper);
            pivots_inv.push(inv);
        }
        Ok(Self {
            diag,
            lower,
            upper,
            pivots_inv,
            sweep,
        })
    }

    fn apply(&self, psi: &[Spinor]) -> Field {
        let n = psi.len();
        (0..n)
            .map(|k| {
                let mut r = self.diag[k] * psi[k];
                if k > 0 {
                    r += self.lower * psi[k - 1];
                }
                if k + 1 < n {
                    r += self.upper * psi[k + 1];
                }
                r
            })
            .collect()
    }

    fn solve(&self, rhs: &[Spinor]) -> Field {
        let n = rhs.len();
        let mut y: Field = Vec::with_capacity(n);
        for k in 0..n {
            let r = if k == 0 {
                rhs[0]
            } else {
                rhs[k] - self.lower * y[k - 1]
            };
            y.push(self.pivots_inv[k] * r);
        }
        for k in (0..n.saturating_sub(1)).rev() {
            let next = y[k + 1];
            y[k] -= self.sweep[k] * next;
        }
        y
    }
}

/// Uniform spatial grid x_k = −X + k·dx on [−X, X] with Dirichlet walls.
#[derive(Clone, Debug)]
pub struct DiracLattice {
    pub half_width: f64,
    pub n_x: usize,
    pub dx: f64,
    pub dt: f64,
    pub mass: f64,
    pub max_steps: usize,
    pub potential: Potential,
    /// A = I + i(dt/2)H.
    implicit: BandOperator,
    /// A* = I − i(dt/2)H.
    explicit: BandOperator,
}

impl DiracLattice {
    pub fn new(
        mass: f64,
        potential: Potential,
        half_width: f64,
        n_x: usize,
        dt: f64,
        max_duration: f64,
    ) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Dirac mass must be positive, got {mass}"
            )));
        }
        if n_x < 3 || !(half_width > 0.0) || !(dt > 0.0) || !(max_duration > 0.0) {
            return Err(Error::InvalidParameter(
                "lattice needs n_x ≥ 3 and positive X, dt, duration".into(),
            ));
        }
        let dx = 2.0 * half_width / (n_x - 1) as f64;
        let a = 0.5 * dt;
        let beta = C64::from(dt / (4.0 * dx));
        let s1 = sigma1();
        let mut diag = Vec::with_capacity(n_x);
        let mut diag_adj = Vec::with_capacity(n_x);
        for k in 0..n_x {
            let v = potential.at(-half_width + k as f64 * dx);
            let d = Matrix2::new(
                C64::from(1.0) + I * (a * (mass + v)),
                C64::from(0.0),
                C64::from(0.0),
                C64::from(1.0) + I * (a * (v - mass)),
            );
            diag_adj.push(d.adjoint());
            diag.push(d);
        }
        let implicit = BandOperator::new(diag, -s1 * beta, s1 * beta)?;
        let explicit = BandOperator::new(diag_adj, s1 * beta, -s1 * beta)?;
        Ok(Self {
            half_width,
            n_x,
            dx,
            dt,
            mass,
            max_steps: (max_duration / dt).ceil() as usize,
            potential,
            implicit,
            explicit,
        })
    }

    pub fn x(&self, k: usize) -> f64 {
        -self.half_width + k as f64 * self.dx
    }

    /// One step forward: ψ ↦ A⁻¹A*ψ.
    pub fn step(&self, psi: &[Spinor]) -> Field {
        self.implicit.solve(&self.explicit.apply(psi))
    }

    /// Exact inverse (and adjoint) of `step`.
    pub fn step_back(&self, psi: &[Spinor]) -> Field {
        self.explicit.solve(&self.implicit.apply(psi))
    }

    pub fn norm_sq(&self, psi: &[Spinor]) -> f64 {
        psi.iter().map(|v| v.norm_squared()).sum::<f64>() * self.dx
    }

    pub fn boundary_mass(&self, psi: &[Spinor]) -> f64 {
        let edge = (1.0 - BOUNDARY_FRACTION) * self.half_width;
        psi.iter()
            .enumerate()
            .filter(|(k, _)| self.x(*k).abs() > edge + 1e-12)
            .map(|(_, v)| v.norm_squared())
            .sum::<f64>()
            * self.dx
    }

    pub fn column_of(&self, x: f64) -> Option<usize> {
        let p = (x + self.half_width) / self.dx;
        let k = p.round();
        if (p - k).abs() > 1e-6 || k < 0.0 || k >= self.n_x as f64 {
            None
        } else {
            Some(k as usize)
        }
    }

    /// Hyperboloid whose grid is the lattice columns within |u| ≤ u_max.
    pub fn hyperboloid(&self, base: SpacetimePoint, s: f64, u_max: f64) -> Result<LatticeSurface> {
        let lo = ((base.x - u_max + self.half_width) / self.dx)
            .ceil()
            .max(0.0) as usize;
        let hi = (((base.x + u_max + self.half_width) / self.dx).floor() as isize)
            .min(self.n_x as isize - 1);
        if hi < lo as isize {
            return Err(Error::LatticeHorizon(format!(
                "hyperboloid based at x = {} misses the box",
                base.x
            )));
        }
        let n = (hi as usize) - lo + 1;
        let hyp = Hyperboloid::new(base, s, self.x(lo) - base.x, self.dx, n)?;
        Ok(LatticeSurface {
            surface: Surface::Hyperboloid(hyp),
            first_column: lo,
        })
    }

    pub fn line(&self, t: f64) -> LatticeSurface {
        LatticeSurface {
            surface: Surface::Line { t, n: self.n_x },
            first_column: 0,
        }
    }

    /// Normalized ψ(x) ∝ exp(−(x − x₀)²/(4w²) + ipx)·χ on the grid.
    pub fn gaussian_packet(
        &self,
        center: f64,
        width: f64,
        momentum: f64,
        spinor: [C64; 2],
    ) -> Result<Field> {
        let chi = Spinor::new(spinor[0], spinor[1]);
        let field: Field = (0..self.n_x)
            .map(|k| {
                let x = self.x(k);
                let env = (-(x - center).powi(2) / (4.0 * width * width)).exp();
                chi * (C64::from_polar(env, momentum * x))
            })
            .collect();
        let norm = self.norm_sq(&field).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::ZeroCollapseNorm { norm });
        }
        Ok(field.into_iter().map(|v| v / C64::from(norm)).collect())
    }
}

#[derive(Clone, Debug)]
pub enum Surface {
    Line { t: f64, n: usize },
    Hyperboloid(Hyperboloid),
}

/// A surface together with the lattice column of its first grid point.
#[derive(Clone, Debug)]
pub struct LatticeSurface {
    pub surface: Surface,
    pub first_column: usize,
}

impl LatticeSurface {
    pub fn len(&self) -> usize {
        match &self.surface {
            Surface::Line { n, .. } => *n,
            Surface::Hyperboloid(h) => h.n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, j: usize) -> f64 {
        match &self.surface {
            Surface::Line { t, .. } => *t,
            Surface::Hyperboloid(h) => h.point(j).t,
        }
    }

    pub fn point(&self, j: usize, lattice: &DiracLattice) -> SpacetimePoint {
        match &self.surface {
            Surface::Line { t, .. } => SpacetimePoint::new(*t, lattice.x(self.first_column + j)),
            Surface::Hyperboloid(h) => h.point(j),
        }
    }

    /// (a, b) with Δμ·h = a·I + b·σ¹ at grid point j.
    pub fn metric(&self, j: usize, dx: f64) -> (f64, f64) {
        match &self.surface {
            Surface::Line { .. } => (dx, 0.0),
            Surface::Hyperboloid(h) => {
                let u = h.u(j);
                (h.du, -h.du * u / h.s.hypot(u))
            }
        }
    }

    pub fn max_time(&self) -> f64 {
        (0..self.len())
            .map(|j| self.time(j))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_time(&self) -> f64 {
        (0..self.len())
            .map(|j| self.time(j))
            .fold(f64::INFINITY, f64::min)
    }
}

/// ψ*(aI + bσ¹)ψ.
pub fn flux_density(v: &Spinor, a: f64, b: f64) -> f64 {
    let cross = (v[0].conj() * v[1]).re;
    a * v.norm_squared() + 2.0 * b * cross
}

fn apply_metric(v: &Spinor, a: f64, b: f64) -> Spinor {
    Spinor::new(v[0] * a + v[1] * b, v[1] * a + v[0] * b)
}

/// Spinor values on the grid of a surface.
#[derive(Clone, Debug)]
pub struct SurfaceState {
    pub surface: LatticeSurface,
    pub values: Field,
    pub dx: f64,
}

impl SurfaceState {
    /// Per-point contributions Δμ·ψ*hψ.
    pub fn densities(&self) -> Vec<f64> {
        self.values
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let (a, b) = self.surface.metric(j, self.dx);
                flux_density(v, a, b)
            })
            .collect()
    }

    pub fn norm_sq(&self) -> f64 {
        self.densities().iter().sum()
    }

    /// Share of the norm carried by the outer tenth of the grid on each side.
    pub fn edge_mass(&self) -> f64 {
        let n = self.values.len();
        let cut = ((n as f64) * BOUNDARY_FRACTION).ceil() as usize;
        let d = self.densities();
        d.iter()
            .enumerate()
            .filter(|(j, _)| *j < cut || *j + cut >= n)
            .map(|(_, x)| x)
            .sum()
    }
}

/// Lattice solution from a constant-time line onward, slices kept in memory.
#[derive(Clone, Debug)]
pub struct Evolution<'a> {
    pub lattice: &'a DiracLattice,
    pub origin: f64,
    slices: Vec<Field>,
    boundary_mass: f64,
}

impl<'a> Evolution<'a> {
    pub fn new(lattice: &'a DiracLattice, origin: f64, psi0: Field) -> Result<Self> {
        if psi0.len() != lattice.n_x {
            return Err(Error::DimensionMismatch {
                expected: lattice.n_x,
                found: psi0.len(),
            });
        }
        let boundary_mass = lattice.boundary_mass(&psi0);
        Ok(Self {
            lattice,
            origin,
            slices: vec![psi0],
            boundary_mass,
        })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.origin + k as f64 * self.lattice.dt
    }

    pub fn slice(&self, k: usize) -> &Field {
        &self.slices[k]
    }

    pub fn n_slices(&self) -> usize {
        self.slices.len()
    }

    /// Largest boundary-region mass over the slices computed so far.
    pub fn boundary_mass(&self) -> f64 {
        self.boundary_mass
    }

    /// Computes slices up to index k.
    pub fn ensure(&mut self, k: usize) -> Result<()> {
        if k > self.lattice.max_steps {
            return Err(Error::LatticeHorizon(format!(
                "time {:.6} needs {k} steps, horizon is {}",
                self.time(k),
                self.lattice.max_steps
            )));
        }
        while self.slices.len() <= k {
            let next = self
                .lattice
                .step(self.slices.last().expect("evolution has an initial slice"));
            self.boundary_mass = self.boundary_mass.max(self.lattice.boundary_mass(&next));
            self.slices.push(next);
        }
        Ok(())
    }

    /// Bracketing slice and interpolation weight for time t ≥ origin.
    fn bracket(&self, t: f64) -> Result<(usize, f64)> {
        let p = (t - self.origin) / self.lattice.dt;
        if p < -1e-9 {
            return Err(Error::LatticeHorizon(format!(
                "time {t} precedes the evolution origin {}",
                self.origin
            )));
        }
        let p = p.max(0.0);
        let k = p.floor();
        let alpha = p - k;
        Ok((k as usize, if alpha < 1e-12 { 0.0 } else { alpha }))
    }

    /// Computes every slice needed to reach time t.
    pub fn ensure_time(&mut self, t: f64) -> Result<()> {
        let (k, alpha) = self.bracket(t)?;
        self.ensure(if alpha > 0.0 { k + 1 } else { k })
    }

    /// Restriction by per-column linear interpolation in t.
    pub fn restrict(&mut self, surface: &LatticeSurface) -> Result<SurfaceState> {
        self.ensure_time(surface.max_time())?;
        self.interpolate(surface)
    }

    /// As `restrict`, for slices that are already computed.
    pub fn interpolate(&self, surface: &LatticeSurface) -> Result<SurfaceState> {
        let n = surface.len();
        if surface.first_column + n > self.lattice.n_x {
            return Err(Error::LatticeHorizon(
                "surface grid leaves the lattice box".into(),
            ));
        }
        let mut values = Vec::with_capacity(n);
        for j in 0..n {
            let c = surface.first_column + j;
            let (k, alpha) = self.bracket(surface.time(j))?;
            if k + usize::from(alpha > 0.0) >= self.slices.len() {
                return Err(Error::LatticeHorizon(format!(
                    "slice {} not computed",
                    k + 1
                )));
            }
            let lo = self.slices[k][c];
            values.push(if alpha > 0.0 {
                lo * C64::from(1.0 - alpha) + self.slices[k + 1][c] * C64::from(alpha)
            } else {
                lo
            });
        }
        Ok(SurfaceState {
            surface: surface.clone(),
            values,
            dx: self.lattice.dx,
        })
    }

    /// Adjoint of `restrict` (with the surface and line inner products),
    /// landing on slice `target`. Every surface point must lie at or above it.
    pub fn pull_back(&mut self, state: &SurfaceState, target: usize) -> Result<Field> {
        let n = state.values.len();
        let lat = self.lattice;
        let mut deposits: Vec<(usize, usize, Spinor)> = Vec::with_capacity(2 * n);
        let mut k_max = target;
        for j in 0..n {
            let (k, alpha) = self.bracket(state.surface.time(j))?;
            if k < target {
                return Err(Error::LatticeHorizon(format!(
                    "surface dips below the pull-back line at point {j}"
                )));
            }
            let (a, b) = state.surface.metric(j, lat.dx);
            let w = apply_metric(&state.values[j], a, b);
            let c = state.surface.first_column + j;
            deposits.push((k, c, w * C64::from(1.0 - alpha)));
            if alpha > 0.0 {
                deposits.push((k + 1, c, w * C64::from(alpha)));
                k_max = k_max.max(k + 1);
            } else {
                k_max = k_max.max(k);
            }
        }
        deposits.sort_by_key(|d| std::cmp::Reverse(d.0));
        let mut v: Field = vec![Spinor::zeros(); lat.n_x];
        let mut next = 0;
        let mut k = k_max;
        loop {
            while next < deposits.len() && deposits[next].0 == k {
                let (_, c, w) = deposits[next];
                v[c] += w;
                next += 1;
            }
            if k == target {
                break;
            }
            v = lat.step_back(&v);
            k -= 1;
        }
        let scale = C64::from(1.0 / lat.dx);
        Ok(v.into_iter().map(|x| x * scale).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::FftPlanner;

    fn up() -> [C64; 2] {
        [C64::from(1.0), C64::from(0.0)]
    }

    #[test]
    fn crank_nicolson_conserves_line_norm() {
        let lat = DiracLattice::new(1.0, Potential::Free, 20.0, 801, 0.01, 20.0).unwrap();
        let psi = lat.gaussian_packet(0.0, 1.0, 0.5, up()).unwrap();
        let mut ev = Evolution::new(&lat, 0.0, psi).unwrap();
        ev.ensure(1000).unwrap();
        let drift = (lat.norm_sq(ev.slice(1000)) - 1.0).abs();
        assert!(drift < 1e-10, "drift {drift:e}");
        assert!(ev.boundary_mass() < 1e-6);
    }

    #[test]
    fn step_back_inverts_step() {
        let lat = DiracLattice::new(
            1.3,
            Potential::GaussianWell {
                depth: 0.5,
                center: 0.2,
                width: 1.0,
            },
            8.0,
            161,
            0.05,
            5.0,
        )
        .unwrap();
        let psi = lat
            .gaussian_packet(0.5, 0.8, -0.3, [C64::new(0.6, 0.0), C64::new(0.0, 0.8)])
            .unwrap();
        let back = lat.step_back(&lat.step(&psi));
        let err: f64 = psi
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-13);
    }

    #[test]
    fn restriction_to_a_slice_time_is_the_slice() {
        let lat = DiracLattice::new(1.0, Potential::Free, 10.0, 201, 0.05, 5.0).unwrap();
        let psi = lat.gaussian_packet(0.0, 1.0, 0.0, up()).unwrap();
        let mut ev = Evolution::new(&lat, 2.0, psi.clone()).unwrap();
        let s = ev.restrict(&lat.line(2.0)).unwrap();
        assert_eq!(s.values, psi);
        assert!((s.norm_sq() - 1.0).abs() < 1e-14);
    }

    /// Free propagation by exp(−i(σ¹p + mσ³)t) on the discrete Fourier grid.
    fn spectral_free(lat: &DiracLattice, psi: &Field, t: f64) -> Field {
        let n = psi.len();
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut comps: Vec<Vec<C64>> = (0..2).map(|c| psi.iter().map(|v| v[c]).collect()).collect();
        for c in comps.iter_mut() {
            fwd.process(c);
        }
        let period = n as f64 * lat.dx;
        for q in 0..n {
            let kq = if q <= n / 2 {
                q as f64
            } else {
                q as f64 - n as f64
            };
            let p = 2.0 * std::f64::consts::PI * kq / period;
            let e = (p * p + lat.mass * lat.mass).sqrt();
            let (cs, sn) = ((e * t).cos(), (e * t).sin() / e);
            let (a, b) = (comps[0][q], comps[1][q]);
            // cos(Et) − i sin(Et)/E · (pσ¹ + mσ³)
            comps[0][q] = a * cs - I * sn * (b * p + a * lat.mass);
            comps[1][q] = b * cs - I * sn * (a * p - b * lat.mass);
        }
        for c in comps.iter_mut() {
            inv.process(c);
        }
        let scale = 1.0 / n as f64;
        (0..n)
            .map(|k| Spinor::new(comps[0][k] * scale, comps[1][k] * scale))
            .collect()
    }

    #[test]
    fn matches_spectral_free_propagation() {
        let lat = DiracLattice::new(1.0, Potential::Free, 25.0, 2501, 0.005, 2.0).unwrap();
        let psi = lat
            .gaussian_packet(0.0, 2.0, 0.3, [C64::new(0.8, 0.0), C64::new(0.0, 0.6)])
            .unwrap();
        let mut ev = Evolution::new(&lat, 0.0, psi.clone()).unwrap();
        let got = ev.restrict(&lat.line(1.0)).unwrap().values;
        let expected = spectral_free(&lat, &psi, 1.0);
        let err: f64 = got
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            * lat.dx;
        assert!(err.sqrt() < 1e-4, "L2 error {:e}", err.sqrt());
    }

    #[test]
    fn hyperboloid_norm_matches_line_norm() {
        let lat = DiracLattice::new(1.0, Potential::Free, 16.0, 641, 0.05, 20.0).unwrap();
        let psi = lat.gaussian_packet(0.0, 1.0, 0.0, up()).unwrap();
        let mut ev = Evolution::new(&lat, 0.0, psi).unwrap();
        let surf = lat
            .hyperboloid(SpacetimePoint::new(0.0, 0.0), 2.0, 12.0)
            .unwrap();
        let state = ev.restrict(&surf).unwrap();
        let n = state.norm_sq();
        assert!((0.99..=1.001).contains(&n), "norm {n}");
        assert!(ev.boundary_mass() < 1e-4);
    }

    #[test]
    fn pull_back_is_the_adjoint_of_restriction() {
        let lat = DiracLattice::new(1.0, Potential::Free, 6.0, 121, 0.1, 10.0).unwrap();
        let psi = lat.gaussian_packet(0.3, 0.7, 0.4, up()).unwrap();
        let chi = lat
            .gaussian_packet(-0.5, 1.1, -0.2, [C64::new(0.0, 1.0), C64::new(0.5, 0.0)])
            .unwrap();
        let surf = lat
            .hyperboloid(SpacetimePoint::new(0.25, 0.1), 0.8, 4.0)
            .unwrap();
        let mut ev_psi = Evolution::new(&lat, 0.0, psi.clone()).unwrap();
        let mut ev_chi = Evolution::new(&lat, 0.0, chi.clone()).unwrap();
        let r_psi = ev_psi.restrict(&surf).unwrap();
        let r_chi = ev_chi.restrict(&surf).unwrap();
        // ⟨R χ, R ψ⟩_Σ against ⟨R*R χ, ψ⟩ on the line.
        let lhs: C64 = r_chi
            .values
            .iter()
            .zip(&r_psi.values)
            .enumerate()
            .map(|(j, (c, p))| {
                let (a, b) = surf.metric(j, lat.dx);
                (c.adjoint() * apply_metric(p, a, b))[0]
            })
            .sum();
        let back = ev_chi.pull_back(&r_chi, 0).unwrap();
        let rhs: C64 = back
            .iter()
            .zip(&psi)
            .map(|(c, p)| (c.adjoint() * p)[0])
            .sum::<C64>()
            * lat.dx;
        assert!((lhs - rhs).norm() < 1e-12, "{lhs} {rhs}");
    }
}
