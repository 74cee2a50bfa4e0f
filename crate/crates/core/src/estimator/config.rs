use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::UnitQuaternion;

/// Process-noise standard deviation, interpolated by `(1 - c)` from `low`
/// (full confidence) to `high` (no confidence).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRange {
    pub low: f64,
    pub high: f64,
}

impl NoiseRange {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn std(&self, c: f64) -> f64 {
        self.low + (1.0 - c) * (self.high - self.low)
    }
}

/// Admissible interval for every dynamics diagonal entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub low: f64,
    pub high: f64,
}

impl Bounds {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn contains(&self, a: &Vector3<f64>) -> bool {
        a.iter().all(|x| *x >= self.low && *x <= self.high)
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.low + self.high)
    }
}

/// Initial particle distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prior {
    /// Attractor position box, m. Equal bounds pin a dimension.
    pub pos_lo: Vector3<f64>,
    pub pos_hi: Vector3<f64>,
    /// Attractor orientation: `center` rotated by a uniform rotation vector
    /// with per-axis half-widths `rot_span` (rad). A span of π or more on all
    /// three axes samples uniformly over SO(3) instead.
    pub rot_center: UnitQuaternion,
    pub rot_span: Vector3<f64>,
}

impl Default for Prior {
    /// The x/y/roll pose-reaching task: height pinned at 0.3 m.
    fn default() -> Self {
        Self {
            pos_lo: Vector3::new(0.6, -0.35, 0.3),
            pos_hi: Vector3::new(1.0, 0.35, 0.3),
            rot_center: UnitQuaternion::identity(),
            rot_span: Vector3::new(0.8, 0.0, 0.0),
        }
    }
}

impl Prior {
    pub fn uniform_rotation(&self) -> bool {
        self.rot_span.iter().all(|s| *s >= std::f64::consts::PI)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub n_particles: usize,
    /// Position velocity residual weight, s²/m².
    pub eta1: f64,
    /// Position acceleration residual weight, s⁴/m².
    pub eta2: f64,
    /// Angular velocity residual weight, s²/rad².
    pub eta3: f64,
    /// Angular acceleration residual weight, s⁴/rad².
    pub eta4: f64,
    /// Ellipsoid decay weight, 1/m².
    pub eta5: f64,
    /// Position filter noise (dynamics diagonal and attractor).
    pub eta6: NoiseRange,
    /// Rotation filter dynamics-diagonal noise.
    pub eta7: NoiseRange,
    /// Rotation filter attractor noise, rad.
    pub eta8: NoiseRange,
    pub a_bounds_pos: Bounds,
    pub a_bounds_rot: Bounds,
    /// Confidence ascent rates, m/s and rad/s.
    pub d_p: f64,
    pub d_o: f64,
    /// Dimensions that receive process noise. Pinned dimensions keep their prior.
    pub pos_mask: [bool; 3],
    pub rot_mask: [bool; 3],
    pub prior: Prior,
    /// Resample when the effective sample size drops below this fraction of N.
    pub resample_fraction: f64,
    /// Low-pass cutoff for the finite-difference acceleration, Hz.
    pub accel_cutoff_hz: f64,
    pub rng_seed: u64,
}

impl Default for FilterConfig {
    /// Residual weights calibrated for SI units and 0.01 velocity noise; the
    /// rest are the reference hyperparameters.
    fn default() -> Self {
        Self {
            n_particles: 500,
            eta1: 1000.0,
            eta2: 10.0,
            eta3: 1000.0,
            eta4: 10.0,
            eta5: 1.5,
            eta6: NoiseRange::new(3e-4, 4e-3),
            eta7: NoiseRange::new(2e-4, 8.5e-3),
            eta8: NoiseRange::new(2e-4, 8.5e-3),
            a_bounds_pos: Bounds::new(-0.6, -0.4),
            a_bounds_rot: Bounds::new(-0.9, -0.6),
            d_p: 0.41,
            d_o: 0.49,
            pos_mask: [true, true, false],
            rot_mask: [true, false, false],
            prior: Prior::default(),
            resample_fraction: 0.5,
            accel_cutoff_hz: 5.0,
            rng_seed: 0,
        }
    }
}

impl FilterConfig {
    /// Default noise and bounds with all four residual weights at 0.5.
    pub fn half_weights() -> Self {
        Self {
            eta1: 0.5,
            eta2: 0.5,
            eta3: 0.5,
            eta4: 0.5,
            ..Self::default()
        }
    }

    /// All six task dimensions free, orientation prior uniform.
    pub fn full_3d() -> Self {
        Self {
            pos_mask: [true; 3],
            rot_mask: [true; 3],
            prior: Prior {
                pos_lo: Vector3::new(0.6, -0.35, 0.1),
                pos_hi: Vector3::new(1.0, 0.35, 0.5),
                rot_center: UnitQuaternion::identity(),
                rot_span: Vector3::repeat(std::f64::consts::PI),
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_particles == 0 {
            return bad("n_particles must be at least 1");
        }
        let etas = [self.eta1, self.eta2, self.eta3, self.eta4, self.eta5];
        let noises = [self.eta6, self.eta7, self.eta8];
        if etas.iter().any(|e| !(*e >= 0.0) || !e.is_finite())
            || noises
                .iter()
                .any(|n| !(n.low >= 0.0 && n.high >= 0.0) || !n.high.is_finite())
        {
            return bad("filter weights and noise levels must be finite and non-negative");
        }
        for b in [self.a_bounds_pos, self.a_bounds_rot] {
            if !(b.low <= b.high && b.high < 0.0) {
                return bad("dynamics bounds need low <= high < 0");
            }
        }
        if !(self.d_p >= 0.0 && self.d_o >= 0.0) {
            return bad("ascent rates must be non-negative");
        }
        if (0..3).any(|i| !(self.prior.pos_lo[i] <= self.prior.pos_hi[i])) {
            return bad("prior position box is inverted");
        }
        if self.prior.rot_span.iter().any(|s| !(*s >= 0.0)) {
            return bad("prior rotation span must be non-negative");
        }
        if !(self.resample_fraction > 0.0 && self.resample_fraction <= 1.0) {
            return bad("resample_fraction must lie in (0, 1]");
        }
        if !(self.accel_cutoff_hz > 0.0) {
            return bad("accel_cutoff_hz must be positive");
        }
        Ok(())
    }
}
