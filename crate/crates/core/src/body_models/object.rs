use nalgebra::{Matrix3, Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::{skew, UnitQuaternion};
use crate::types::{Pose, Twist, Wrench};

pub const GRAVITY: f64 = 9.81;

/// The carried rigid load. Grasp offsets are constant in the object frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidObject {
    /// kg
    pub mass: f64,
    /// kg·m², about the CoM, object frame.
    pub inertia: Matrix3<f64>,
    /// Robot grasp point relative to the CoM, object frame, m.
    pub robot_grasp: Vector3<f64>,
    /// Human grasp point relative to the CoM, object frame, m.
    pub human_grasp: Vector3<f64>,
}

impl Default for RigidObject {
    /// A 4.5 kg bar, 0.6 × 0.1 × 0.05 m, held at both ends.
    fn default() -> Self {
        let m = 4.5;
        let (a, b, c): (f64, f64, f64) = (0.6, 0.1, 0.05);
        Self {
            mass: m,
            inertia: Matrix3::from_diagonal(&Vector3::new(
                m * (b * b + c * c) / 12.0,
                m * (a * a + c * c) / 12.0,
                m * (a * a + b * b) / 12.0,
            )),
            robot_grasp: Vector3::new(-0.25, 0.0, 0.0),
            human_grasp: Vector3::new(0.25, 0.0, 0.0),
        }
    }
}

impl RigidObject {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) || !self.mass.is_finite() {
            return Err(Error::Config(format!("object mass must be positive, got {}", self.mass)));
        }
        let sym = (self.inertia - self.inertia.transpose()).amax() < 1e-12;
        if !sym || self.inertia.cholesky().is_none() {
            return Err(Error::NotSpd);
        }
        Ok(())
    }

    /// Robot tool frame in the CoM frame; the tool axes are aligned with the object.
    pub fn tool_in_com(&self) -> Pose {
        Pose::new(self.robot_grasp, UnitQuaternion::identity())
    }

    /// CoM pose given the robot tool pose.
    pub fn com_from_tool(&self, tool: &Pose) -> Pose {
        tool.compose(&self.tool_in_com().inverse())
    }

    pub fn robot_contact(&self, com: &Pose) -> Vector3<f64> {
        com.p + com.q.rotate(&self.robot_grasp)
    }

    pub fn human_contact(&self, com: &Pose) -> Vector3<f64> {
        com.p + com.q.rotate(&self.human_grasp)
    }

    /// Gravity wrench of the load at its CoM, as it appears on the left-hand
    /// side of the dynamics (`M v̇ + g = u`).
    pub fn gravity(&self) -> Wrench {
        Wrench::new(Vector3::new(0.0, 0.0, self.mass * GRAVITY), Vector3::zeros())
    }

    /// 6×6 spatial inertia at the CoM for the given orientation.
    pub fn mass_matrix(&self, q: &UnitQuaternion) -> Matrix6<f64> {
        let r = q.to_rotation_matrix();
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Matrix3::identity() * self.mass));
        m.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(r * self.inertia * r.transpose()));
        m
    }
}

/// Maps a wrench applied at a point offset `r` (world frame) from the CoM to
/// the equivalent CoM wrench: `[f; τ + r × f]`.
pub fn contact_to_com(r: &Vector3<f64>) -> Matrix6<f64> {
    let mut g = Matrix6::identity();
    g.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(r));
    g
}

/// Velocity of the contact point from the CoM twist: `[v + ω × r; ω]`.
pub fn contact_twist(v: &Twist, r: &Vector3<f64>) -> Twist {
    Twist::new(v.lin + v.ang.cross(r), v.ang)
}
