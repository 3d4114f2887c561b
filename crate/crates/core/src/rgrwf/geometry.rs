//! Points, causal structure and hyperboloids of 1+1 Minkowski space-time.

use crate::error::{Error, Result};

/// Tolerance for a point counting as on a hyperboloid.
pub const SURFACE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpacetimePoint {
    pub t: f64,
    pub x: f64,
}

impl SpacetimePoint {
    pub fn new(t: f64, x: f64) -> Self {
        Self { t, x }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.is_finite()
    }

    /// Minkowski square (y − x)·(y − x) with signature (+, −).
    pub fn interval_sq(&self, base: &SpacetimePoint) -> f64 {
        let dt = self.t - base.t;
        let dx = self.x - base.x;
        dt * dt - dx * dx
    }
}

/// Timelike distance from `x` to `y`, or `NotInFuture` when y ∉ J⁺(x).
pub fn tdist(y: &SpacetimePoint, x: &SpacetimePoint) -> Result<f64> {
    let dt = y.t - x.t;
    let dx = (y.x - x.x).abs();
    if dt < dx || dt < 0.0 {
        return Err(Error::NotInFuture);
    }
    Ok(((dt - dx) * (dt + dx)).sqrt())
}

/// Whether y lies strictly inside the future light cone of x.
pub fn in_open_future(y: &SpacetimePoint, x: &SpacetimePoint) -> bool {
    matches!(tdist(y, x), Ok(d) if d > 0.0)
}

/// ℍ_s(base) sampled on the uniform grid u_j = u_first + j·du.
#[derive(Clone, Debug)]
pub struct Hyperboloid {
    pub base: SpacetimePoint,
    pub s: f64,
    pub u_first: f64,
    pub du: f64,
    pub n: usize,
}

impl Hyperboloid {
    pub fn new(base: SpacetimePoint, s: f64, u_first: f64, du: f64, n: usize) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "hyperboloid parameter s must be positive, got {s}"
            )));
        }
        if !(du > 0.0) || n == 0 || !base.is_finite() {
            return Err(Error::InvalidParameter(
                "hyperboloid grid must be nonempty with positive spacing".into(),
            ));
        }
        Ok(Self {
            base,
            s,
            u_first,
            du,
            n,
        })
    }

    /// Symmetric grid of n points on [−u_max, u_max].
    pub fn symmetric(base: SpacetimePoint, s: f64, u_max: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(
                "symmetric hyperboloid grid needs two points".into(),
            ));
        }
        Self::new(base, s, -u_max, 2.0 * u_max / (n - 1) as f64, n)
    }

    pub fn u(&self, j: usize) -> f64 {
        self.u_first + j as f64 * self.du
    }

    pub fn point(&self, j: usize) -> SpacetimePoint {
        let u = self.u(j);
        SpacetimePoint::new(self.base.t + self.s.hypot(u), self.base.x + u)
    }

    pub fn points(&self) -> Vec<SpacetimePoint> {
        (0..self.n).map(|j| self.point(j)).collect()
    }

    /// Δμ_j = Δu/√(1 + u²/s²).
    pub fn measure(&self, j: usize) -> f64 {
        let u = self.u(j);
        self.du / (1.0 + (u / self.s).powi(2)).sqrt()
    }

    /// Future unit normal (n⁰, n¹) at grid point j.
    pub fn normal(&self, j: usize) -> (f64, f64) {
        let u = self.u(j);
        (self.s.hypot(u) / self.s, u / self.s)
    }

    /// Rapidity-like coordinate: sdist(a, b) = |η(a) − η(b)|.
    pub fn arc_coordinate(&self, u: f64) -> f64 {
        self.s * (u / self.s).asinh()
    }

    pub fn sdist_u(&self, u_a: f64, u_b: f64) -> f64 {
        (self.arc_coordinate(u_a) - self.arc_coordinate(u_b)).abs()
    }

    /// Spatial offset u of a point on the surface, checking that it lies there.
    pub fn locate(&self, y: &SpacetimePoint) -> Result<f64> {
        let mismatch = match tdist(y, &self.base) {
            Ok(d) => (d - self.s).abs(),
            Err(_) => f64::INFINITY,
        };
        if mismatch > SURFACE_TOL * (1.0 + self.s) {
            return Err(Error::OffSurface { mismatch });
        }
        Ok(y.x - self.base.x)
    }

    /// Spacelike distance along the surface between two of its points.
    pub fn sdist(&self, a: &SpacetimePoint, b: &SpacetimePoint) -> Result<f64> {
        Ok(self.sdist_u(self.locate(a)?, self.locate(b)?))
    }
}
