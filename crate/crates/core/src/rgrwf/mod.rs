//! Relativistic flash process in 1+1 Minkowski space-time.

pub mod ck;
pub mod dirac;
pub mod flash;
pub mod geometry;
pub mod sampler;

use crate::error::{Error, Result};
use dirac::{DiracLattice, Potential};

pub use geometry::{tdist, Hyperboloid, SpacetimePoint};

/// Radial localization profile ℓ: [0, ∞) → [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Profile {
    /// exp(−u²/(2σ²)).
    Gaussian { sigma: f64 },
    /// (1 − (u/σ)²)² on [0, σ], zero beyond.
    Compact { sigma: f64 },
}

impl Profile {
    pub fn width(&self) -> f64 {
        match *self {
            Profile::Gaussian { sigma } | Profile::Compact { sigma } => sigma,
        }
    }

    pub fn value(&self, u: f64) -> f64 {
        let u = u.abs();
        match *self {
            Profile::Gaussian { sigma } => (-0.5 * (u / sigma).powi(2)).exp(),
            Profile::Compact { sigma } => {
                if u >= sigma {
                    0.0
                } else {
                    (1.0 - (u / sigma).powi(2)).powi(2)
                }
            }
        }
    }

    /// (2∫₀^∞ℓ)⁻¹, the normalizer on any hyperboloid of the plane.
    pub fn continuum_normalizer(&self) -> f64 {
        match *self {
            Profile::Gaussian { sigma } => 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt()),
            Profile::Compact { sigma } => 15.0 / (16.0 * sigma),
        }
    }
}

/// Physical and lattice parameters of the relativistic process.
#[derive(Clone, Debug, PartialEq)]
pub struct RgrwfModel {
    pub mass: f64,
    pub lambda: f64,
    pub profile: Profile,
    pub n_labels: usize,
    pub potential: Potential,
    /// Spatial box [−X, X].
    pub half_width: f64,
    pub n_x: usize,
    pub dt: f64,
    /// Hyperboloid grids cover |u| ≤ window around their base.
    pub window: f64,
    /// Longest stretch of lattice time one evolution may cover.
    pub max_duration: f64,
}

impl RgrwfModel {
    /// Free model on the lattice of refinement `level` (Δx = Δt = 0.2/2^(level−1)).
    pub fn at_level(
        mass: f64,
        lambda: f64,
        profile: Profile,
        n_labels: usize,
        level: u32,
    ) -> Result<Self> {
        if level == 0 {
            return Err(Error::InvalidParameter("lattice level starts at 1".into()));
        }
        let dx = 0.2 / f64::from(1u32 << (level - 1));
        let half_width = 24.0;
        let model = Self {
            mass,
            lambda,
            profile,
            n_labels,
            potential: Potential::Free,
            half_width,
            n_x: (2.0 * half_width / dx).round() as usize + 1,
            dt: dx,
            window: 20.0,
            max_duration: 60.0,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mass must be positive, got {}",
                self.mass
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.profile.width() > 0.0) || !self.profile.width().is_finite() {
            return Err(Error::InvalidParameter(
                "profile width must be positive".into(),
            ));
        }
        if self.n_labels == 0 {
            return Err(Error::InvalidParameter(
                "at least one label is required".into(),
            ));
        }
        if !(self.window > 0.0) || !(self.max_duration > 0.0) {
            return Err(Error::InvalidParameter(
                "window and max_duration must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn lattice(&self) -> Result<DiracLattice> {
        self.validate()?;
        DiracLattice::new(
            self.mass,
            self.potential.clone(),
            self.half_width,
            self.n_x,
            self.dt,
            self.max_duration,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn continuum_normalizer_by_hyperboloid_quadrature() {
        // ∫_ℍ dμ ℓ(sdist(base point, ·)) over a wide u range, for several s.
        for profile in [
            Profile::Gaussian { sigma: 1.0 },
            Profile::Compact { sigma: 0.8 },
        ] {
            for s in [1.0, 2.0, 3.0] {
                let h = Hyperboloid::symmetric(SpacetimePoint::new(0.0, 0.0), s, 400.0, 800_001)
                    .unwrap();
                let total: f64 = (0..h.n)
                    .map(|j| h.measure(j) * profile.value(h.sdist_u(h.u(j), 0.0)))
                    .sum();
                assert!(
                    (1.0 / total - profile.continuum_normalizer()).abs() < 1e-4,
                    "{profile:?} s = {s}: {}",
                    1.0 / total
                );
            }
        }
        assert!((Profile::Gaussian { sigma: 1.0 }.continuum_normalizer() - 0.3989).abs() < 1e-4);
    }

    #[test]
    fn compact_profile_vanishes_beyond_width() {
        let p = Profile::Compact { sigma: 0.5 };
        assert_eq!(p.value(0.5), 0.0);
        assert_eq!(p.value(2.0), 0.0);
        assert_eq!(p.value(0.0), 1.0);
    }
}
