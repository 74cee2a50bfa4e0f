use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::types::Pose;

/// Confidence in the current estimate, driven by velocity tracking error.
///
/// `c` integrates `d - e` and is clipped to `[0, 1]`. `grad` is the running
/// integral of `∂c/∂v`, the unit residual `(v̂ - v)/‖v̂ - v‖`, since the last
/// time `c` hit a clip bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceState {
    pub c: f64,
    /// Ascent rate, 1/s.
    pub d: f64,
    /// Last tracking error.
    pub e: f64,
    /// Last rate of change `d - e`, zero when clipped.
    pub c_dot: f64,
    pub grad: Vector3<f64>,
}

impl ConfidenceState {
    pub fn new(d: f64) -> Self {
        Self {
            c: 0.0,
            d,
            e: 0.0,
            c_dot: 0.0,
            grad: Vector3::zeros(),
        }
    }

    pub fn with_value(mut self, c: f64) -> Self {
        self.c = c.clamp(0.0, 1.0);
        self
    }
}

/// `c ← clip(c + dt (d - ‖v_est - v_actual‖), 0, 1)`.
pub fn update_confidence(
    conf: &ConfidenceState,
    v_actual: &Vector3<f64>,
    v_est: &Vector3<f64>,
    dt: f64,
) -> ConfidenceState {
    debug_assert!(dt > 0.0);
    let r = v_est - v_actual;
    let e = r.norm();
    let raw = conf.c + dt * (conf.d - e);
    let c = raw.clamp(0.0, 1.0);
    let clipped = raw != c;
    let grad = if clipped {
        Vector3::zeros()
    } else if e > 0.0 {
        conf.grad + r * (dt / e)
    } else {
        conf.grad
    };
    ConfidenceState {
        c,
        d: conf.d,
        e,
        c_dot: (c - conf.c) / dt,
        grad,
    }
}

/// One filter-rate sample of the co-manipulated object.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub pose: Pose,
    pub v_lin: Vector3<f64>,
    pub a_lin: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub alpha: Vector3<f64>,
    pub human_hand: Vector3<f64>,
}

impl Observation {
    pub fn is_finite(&self) -> bool {
        self.pose.is_finite()
            && [self.v_lin, self.a_lin, self.omega, self.alpha, self.human_hand]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// First-order low-pass filtered finite difference of a velocity stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccelEstimator {
    cutoff_hz: f64,
    prev: Option<Vector3<f64>>,
    value: Vector3<f64>,
}

impl AccelEstimator {
    pub fn new(cutoff_hz: f64) -> Self {
        Self {
            cutoff_hz,
            prev: None,
            value: Vector3::zeros(),
        }
    }

    pub fn update(&mut self, v: &Vector3<f64>, dt: f64) -> Vector3<f64> {
        if let Some(prev) = self.prev {
            let raw = (v - prev) / dt;
            let rc = 1.0 / (2.0 * std::f64::consts::PI * self.cutoff_hz);
            let alpha = dt / (rc + dt);
            self.value += (raw - self.value) * alpha;
        }
        self.prev = Some(*v);
        self.value
    }

    pub fn value(&self) -> Vector3<f64> {
        self.value
    }

    pub fn reset(&mut self) {
        self.prev = None;
        self.value = Vector3::zeros();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rises_at_ascent_rate_and_saturates() {
        let mut c = ConfidenceState::new(0.41);
        let z = Vector3::zeros();
        let dt = 0.01;
        let mut t = 0.0;
        while c.c < 1.0 {
            c = update_confidence(&c, &z, &z, dt);
            t += dt;
        }
        assert_abs_diff_eq!(t, 1.0 / 0.41, epsilon = dt);
        c = update_confidence(&c, &z, &z, dt);
        assert_eq!(c.c, 1.0);
    }

    #[test]
    fn error_equal_to_rate_holds_still() {
        let c = ConfidenceState::new(0.41).with_value(0.5);
        let next = update_confidence(&c, &Vector3::new(0.41, 0.0, 0.0), &Vector3::zeros(), 0.05);
        assert_abs_diff_eq!(next.c, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn large_error_clips_at_zero() {
        let mut c = ConfidenceState::new(0.41).with_value(0.7);
        for _ in 0..100 {
            c = update_confidence(&c, &Vector3::new(4.1, 0.0, 0.0), &Vector3::zeros(), 0.05);
            assert!((0.0..=1.0).contains(&c.c));
        }
        assert_eq!(c.c, 0.0);
        assert_eq!(c.grad, Vector3::zeros());
    }

    #[test]
    fn gradient_accumulates_unit_residual() {
        let c = ConfidenceState::new(0.41).with_value(0.5);
        let n = update_confidence(&c, &Vector3::new(0.0, 0.1, 0.0), &Vector3::zeros(), 0.05);
        assert_abs_diff_eq!(n.grad, Vector3::new(0.0, -0.05, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn accel_tracks_a_ramp() {
        let mut a = AccelEstimator::new(5.0);
        let dt = 0.05;
        let mut out = Vector3::zeros();
        for k in 0..200 {
            out = a.update(&Vector3::new(0.3 * k as f64 * dt, 0.0, 0.0), dt);
        }
        assert_abs_diff_eq!(out.x, 0.3, epsilon = 1e-9);
    }
}
