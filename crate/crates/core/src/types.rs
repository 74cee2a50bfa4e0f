use nalgebra::{Isometry3, Quaternion, Translation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::rotmath::UnitQuaternion;

/// Position in metres plus orientation, world frame.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub p: Vector3<f64>,
    pub q: UnitQuaternion,
}

impl Pose {
    pub fn new(p: Vector3<f64>, q: UnitQuaternion) -> Self {
        Self { p, q }
    }

    /// Composes `self ∘ other`: `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            p: self.p + self.q.rotate(&other.p),
            q: self.q * other.q,
        }
    }

    pub fn inverse(&self) -> Pose {
        let qi = self.q.conj();
        Pose {
            p: -qi.rotate(&self.p),
            q: qi,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().all(|x| x.is_finite()) && self.q.coords().iter().all(|x| x.is_finite())
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        let c = self.q.coords();
        let q = nalgebra::UnitQuaternion::new_unchecked(Quaternion::new(c[0], c[1], c[2], c[3]));
        Isometry3::from_parts(Translation3::from(self.p), q)
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let r = iso.rotation;
        Pose {
            p: iso.translation.vector,
            q: UnitQuaternion::new(r.w, Vector3::new(r.i, r.j, r.k))
                .unwrap_or_else(|_| UnitQuaternion::identity()),
        }
    }
}

/// Linear (m/s) and angular (rad/s) velocity.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub lin: Vector3<f64>,
    pub ang: Vector3<f64>,
}

impl Twist {
    pub fn new(lin: Vector3<f64>, ang: Vector3<f64>) -> Self {
        Self { lin, ang }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.lin.x, self.lin.y, self.lin.z, self.ang.x, self.ang.y, self.ang.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            lin: v.fixed_rows::<3>(0).into(),
            ang: v.fixed_rows::<3>(3).into(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

/// Force (N) and torque (N·m).
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(force: Vector3<f64>, torque: Vector3<f64>) -> Self {
        Self { force, torque }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            force: v.fixed_rows::<3>(0).into(),
            torque: v.fixed_rows::<3>(3).into(),
        }
    }
}

impl std::ops::Add for Wrench {
    type Output = Wrench;
    fn add(self, rhs: Wrench) -> Wrench {
        Wrench::new(self.force + rhs.force, self.torque + rhs.torque)
    }
}
