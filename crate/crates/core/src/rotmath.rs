//! Unit quaternion calculus on SO(3).
//!
//! Quaternions are stored as `[s, u]` with `s` the scalar part and `u` the
//! vector part. The product follows the partitioned (Hamilton) form
//!
//! ```text
//! q1 ⊗ q2 = [ s1 s2 - u1ᵀu2,  s1 u2 + s2 u1 + S(u1) u2 ]
//! ```
//!
//! Every value is kept on the upper hemisphere (`s >= 0`, and when `s == 0`
//! the first non-zero vector component is non-negative) so that the double
//! cover never leaks into averages or comparisons. Angular velocities are
//! expressed in the world frame: `q(t + dt) = exp(ω dt / 2) ⊗ q(t)`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this vector-part norm the logarithm takes its zero branch.
pub const LOG_SINGULAR_EPS: f64 = 1e-12;

/// Skew-symmetric cross-product matrix, `S(a) b = a × b`.
pub fn skew(u: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -u.z, u.y, u.z, 0.0, -u.x, -u.y, u.x, 0.0)
}

#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct UnitQuaternion {
    s: f64,
    u: Vector3<f64>,
}

impl UnitQuaternion {
    pub fn identity() -> Self {
        Self {
            s: 1.0,
            u: Vector3::zeros(),
        }
    }

    /// Builds a quaternion from raw coordinates, normalizing and resolving the
    /// sign. Fails on non-finite or zero-norm input.
    pub fn new(s: f64, u: Vector3<f64>) -> Result<Self> {
        let norm = (s * s + u.norm_squared()).sqrt();
        if !norm.is_finite() || norm < 1e-300 {
            return Err(Error::InvalidQuaternion(format!(
                "[{s}, {}, {}, {}]",
                u.x, u.y, u.z
            )));
        }
        Ok(Self::canonical(s / norm, u / norm))
    }

    /// Normalizes coordinates already known to be close to unit norm.
    fn renormalized(s: f64, u: Vector3<f64>) -> Self {
        let norm = (s * s + u.norm_squared()).sqrt();
        Self::canonical(s / norm, u / norm)
    }

    fn canonical(s: f64, u: Vector3<f64>) -> Self {
        let flip = if s != 0.0 {
            s < 0.0
        } else {
            u.iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0)
        };
        if flip {
            Self { s: -s, u: -u }
        } else {
            Self { s, u }
        }
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n < 1e-300 || angle == 0.0 {
            return Self::identity();
        }
        let half = 0.5 * angle;
        Self::renormalized(half.cos(), axis / n * half.sin())
    }

    /// Fixed-axis roll/pitch/yaw, i.e. `Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn from_rpy(roll: f64, pitch: f64, yaw: f64) -> Self {
        let qx = Self::from_axis_angle(&Vector3::x(), roll);
        let qy = Self::from_axis_angle(&Vector3::y(), pitch);
        let qz = Self::from_axis_angle(&Vector3::z(), yaw);
        qz * qy * qx
    }

    /// Inverse of [`UnitQuaternion::from_rpy`], returning `(roll, pitch, yaw)`.
    pub fn to_rpy(&self) -> (f64, f64, f64) {
        let r = self.to_rotation_matrix();
        let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        (roll, pitch, yaw)
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn u(&self) -> &Vector3<f64> {
        &self.u
    }

    pub fn scalar(&self) -> f64 {
        self.s
    }

    pub fn vec(&self) -> Vector3<f64> {
        self.u
    }

    pub fn coords(&self) -> Vector4<f64> {
        Vector4::new(self.s, self.u.x, self.u.y, self.u.z)
    }

    pub fn conj(&self) -> Self {
        // Only the vector part flips, so the hemisphere is preserved unless s == 0.
        Self::canonical(self.s, -self.u)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.s * other.s + self.u.dot(&other.u)
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let s = self.s;
        let u = self.u;
        let su = skew(&u);
        Matrix3::identity() * (s * s - u.norm_squared()) + 2.0 * u * u.transpose() + 2.0 * s * su
    }

    /// Rotates a world-frame vector: `R(q) v`.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let t = 2.0 * self.u.cross(v);
        v + self.s * t + self.u.cross(&t)
    }

    /// Geodesic angle between two orientations, in `[0, π]`.
    pub fn angle_to(&self, other: &Self) -> f64 {
        2.0 * log_map(&(*self * other.conj())).norm()
    }
}

impl TryFrom<[f64; 4]> for UnitQuaternion {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        Self::new(c[0], Vector3::new(c[1], c[2], c[3]))
    }
}

impl From<UnitQuaternion> for [f64; 4] {
    fn from(q: UnitQuaternion) -> Self {
        [q.s, q.u.x, q.u.y, q.u.z]
    }
}

impl fmt::Debug for UnitQuaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "UnitQuaternion[{}, ({}, {}, {})]",
            self.s, self.u.x, self.u.y, self.u.z
        )
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    fn mul(self, rhs: Self) -> Self {
        quat_mul(&self, &rhs)
    }
}

/// Logarithm coordinates of a unit quaternion, `arccos(s) u / ‖u‖`.
///
/// The rotation vector of the underlying rotation is `2 * log`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RotVec(pub Vector3<f64>);

impl RotVec {
    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

pub fn quat_mul(q1: &UnitQuaternion, q2: &UnitQuaternion) -> UnitQuaternion {
    let s = q1.s * q2.s - q1.u.dot(&q2.u);
    let u = q1.s * q2.u + q2.s * q1.u + q1.u.cross(&q2.u);
    UnitQuaternion::renormalized(s, u)
}

/// Quaternion logarithm with the zero branch at `‖u‖ = 0`.
///
/// `atan2(‖u‖, s)` is used for the angle; it equals `arccos(s)` on the unit
/// sphere and keeps full precision near the identity.
pub fn log_map(q: &UnitQuaternion) -> RotVec {
    let n = q.u.norm();
    if n < LOG_SINGULAR_EPS {
        return RotVec(Vector3::zeros());
    }
    RotVec(q.u * (n.atan2(q.s) / n))
}

/// `exp(ω Δt / 2)`. Errors when the argument norm exceeds π.
pub fn exp_map(omega: &Vector3<f64>, dt: f64) -> Result<UnitQuaternion> {
    let arg = omega * (0.5 * dt);
    let theta = arg.norm();
    if !theta.is_finite() || theta > PI {
        return Err(Error::RotationRange { norm: theta });
    }
    if theta == 0.0 {
        return Ok(UnitQuaternion::identity());
    }
    Ok(UnitQuaternion::renormalized(
        theta.cos(),
        arg * (theta.sin() / theta),
    ))
}

/// Angular velocity that rotates `q2` onto `q1` in `dt` seconds.
pub fn omega_between(q1: &UnitQuaternion, q2: &UnitQuaternion, dt: f64) -> Result<Vector3<f64>> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::NonPositiveDt(dt));
    }
    Ok(2.0 * log_map(&(*q1 * q2.conj())).0 / dt)
}

/// Quaternion time derivative `q̇ = ½ ω̃ ⊗ q`, returned as `[ṡ, u̇]`.
pub fn propagate(q: &UnitQuaternion, omega: &Vector3<f64>) -> Vector4<f64> {
    let s_dot = -0.5 * q.u.dot(omega);
    let u_dot = 0.5 * (q.s * omega - skew(&q.u) * omega);
    Vector4::new(s_dot, u_dot.x, u_dot.y, u_dot.z)
}

/// `q(t + Δt) = exp(ω Δt / 2) ⊗ q(t)`.
pub fn integrate(q: &UnitQuaternion, omega: &Vector3<f64>, dt: f64) -> Result<UnitQuaternion> {
    Ok(exp_map(omega, dt)? * *q)
}
