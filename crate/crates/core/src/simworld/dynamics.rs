use std::sync::Arc;

use nalgebra::{DVector, Matrix6, Vector3, Vector6};

use super::scenario::{HumanPolicy, Locks, SimParams};
use crate::body_models::{contact_to_com, dls_step, pose_error, HumanArm, RigidObject, SerialChain};
use crate::control::desired_wrench;
use crate::error::{Error, Result};
use crate::intent_ds::{eval_pos, eval_rot, PosDsParams, RotDsParams};
use crate::rotmath::{integrate, log_map, UnitQuaternion};
use crate::types::{Pose, Twist, Wrench};

/// `M v̇ + g = G_rᵀ u_r + u_h'` at the object CoM, with C = 0.
#[derive(Clone, Debug)]
pub struct CombinedDynamics {
    m: Matrix6<f64>,
    m_inv: Matrix6<f64>,
    object: RigidObject,
    robot_gravity: Wrench,
}

impl CombinedDynamics {
    /// Load inertia is taken at orientation `q0` and held constant; the robot
    /// contributes a constant diagonal.
    pub fn new(object: &RigidObject, robot_mass: &[f64; 6], q0: &UnitQuaternion, robot_gravity: Wrench) -> Result<Self> {
        object.validate()?;
        let m = object.mass_matrix(q0) + Matrix6::from_diagonal(&Vector6::from_column_slice(robot_mass));
        let m = (m + m.transpose()) * 0.5;
        let m_inv = m.cholesky().ok_or(Error::NotSpd)?.inverse();
        Ok(Self {
            m,
            m_inv,
            object: object.clone(),
            robot_gravity,
        })
    }

    pub fn from_params(p: &SimParams, q0: &UnitQuaternion) -> Result<Self> {
        Self::new(&p.object, &p.robot_mass, q0, p.robot_gravity)
    }

    pub fn mass(&self) -> &Matrix6<f64> {
        &self.m
    }

    pub fn object(&self) -> &RigidObject {
        &self.object
    }

    /// `G_rᵀ` at the current pose: robot tool wrench to CoM wrench.
    pub fn grasp_t(&self, x: &Pose) -> Matrix6<f64> {
        contact_to_com(&x.q.rotate(&self.object.robot_grasp))
    }

    pub fn robot_gravity(&self) -> Wrench {
        self.robot_gravity
    }

    /// `g = G_rᵀ g_r + g_l`.
    pub fn gravity(&self, x: &Pose) -> Wrench {
        Wrench::from_vector(&(self.grasp_t(x) * self.robot_gravity.to_vector() + self.object.gravity().to_vector()))
    }

    /// Tool wrench that exactly cancels gravity at `x`.
    pub fn gravity_compensation(&self, x: &Pose) -> Result<Wrench> {
        desired_wrench(&Wrench::zero(), &self.robot_gravity, &self.object.gravity(), &self.grasp_t(x))
    }

    /// CoM wrench from the robot tool wrench, human wrench and gravity.
    pub fn net_wrench(&self, x: &Pose, u_r: &Wrench, u_h: &Wrench) -> Vector6<f64> {
        self.grasp_t(x) * u_r.to_vector() + u_h.to_vector() - self.gravity(x).to_vector()
    }

    pub fn accel(&self, x: &Pose, u_r: &Wrench, u_h: &Wrench) -> Vector6<f64> {
        self.m_inv * self.net_wrench(x, u_r, u_h)
    }

    /// `½ vᵀ M v`.
    pub fn kinetic_energy(&self, v: &Twist) -> f64 {
        let v = v.to_vector();
        0.5 * v.dot(&(self.m * v))
    }
}

#[derive(Clone, Debug)]
pub struct SimState {
    /// Object CoM pose.
    pub x: Pose,
    pub v: Twist,
    /// Robot shadow arm joints, rad, and their rates.
    pub theta: DVector<f64>,
    pub theta_dot: DVector<f64>,
    pub t: f64,
    /// Ground-truth intent; never shown to the estimator.
    pub hidden_pos: PosDsParams,
    pub hidden_rot: RotDsParams,
    pub human_arm: HumanArm,
}

impl SimState {
    pub fn is_valid(&self, robot: &SerialChain) -> bool {
        self.x.is_finite()
            && self.v.to_vector().iter().all(|x| x.is_finite())
            && (self.x.q.coords().norm() - 1.0).abs() < 1e-9
            && robot.within_limits(&self.theta, 1e-3)
    }

    pub fn hidden_goal(&self) -> Pose {
        Pose::new(self.hidden_pos.attractor, self.hidden_rot.attractor)
    }
}

/// The simulated world: combined dynamics and the robot holding the object.
#[derive(Clone, Debug)]
pub struct SimWorld {
    pub dynamics: CombinedDynamics,
    pub robot: Arc<SerialChain>,
    pub shadow_tol_pos: f64,
    pub shadow_tol_rot: f64,
}

const SHADOW_ITERS: usize = 4;
const SHADOW_DAMPING: f64 = 1e-3;

impl SimWorld {
    pub fn new(params: &SimParams, robot: Arc<SerialChain>, q0: &UnitQuaternion) -> Result<Self> {
        Ok(Self {
            dynamics: CombinedDynamics::from_params(params, q0)?,
            robot,
            shadow_tol_pos: params.shadow_tol_pos,
            shadow_tol_rot: params.shadow_tol_rot,
        })
    }

    /// Robot tool pose for an object CoM pose.
    pub fn tool_pose(&self, x: &Pose) -> Pose {
        x.compose(&self.dynamics.object().tool_in_com())
    }

    /// Moves the shadow arm from `theta` onto the tool pose of `x`.
    pub fn track_shadow(&self, theta: &DVector<f64>, x: &Pose) -> Result<DVector<f64>> {
        let target = self.tool_pose(x).to_isometry();
        let mut th = theta.clone();
        let mut e = pose_error(&target, &self.robot.fk_isometry(&th));
        for _ in 0..SHADOW_ITERS {
            if e.fixed_rows::<3>(0).norm() < 1e-9 && e.fixed_rows::<3>(3).norm() < 1e-9 {
                break;
            }
            th += dls_step(&self.robot.jacobian(&th), &e, SHADOW_DAMPING);
            self.robot.clamp_to_limits(&mut th);
            e = pose_error(&target, &self.robot.fk_isometry(&th));
        }
        let (ep, er) = (e.fixed_rows::<3>(0).norm(), e.fixed_rows::<3>(3).norm());
        if ep > self.shadow_tol_pos || er > self.shadow_tol_rot {
            return Err(Error::SimFault(format!(
                "shadow arm lost the tool: {ep:.2e} m, {er:.2e} rad"
            )));
        }
        Ok(th)
    }
}

/// Semi-implicit Euler step of the combined dynamics. `u_r` is the wrench the
/// robot applies at its tool, `u_h` the human wrench at the CoM.
pub fn step(state: &SimState, world: &SimWorld, u_r: &Wrench, u_h: &Wrench, dt: f64) -> Result<SimState> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveDt(dt));
    }
    if dt > 0.01 {
        return Err(Error::Config(format!("dt {dt} exceeds 0.01 s")));
    }
    let a = world.dynamics.accel(&state.x, u_r, u_h);
    let v = Twist::from_vector(&(state.v.to_vector() + a * dt));
    let x = Pose::new(state.x.p + v.lin * dt, integrate(&state.x.q, &v.ang, dt)?);
    if !x.is_finite() || !v.to_vector().iter().all(|e| e.is_finite()) {
        return Err(Error::SimFault("non-finite state".into()));
    }
    let theta = world.track_shadow(&state.theta, &x)?;
    let theta_dot = (&theta - &state.theta) / dt;
    Ok(SimState {
        x,
        v,
        theta,
        theta_dot,
        t: state.t + dt,
        hidden_pos: state.hidden_pos,
        hidden_rot: state.hidden_rot,
        human_arm: state.human_arm.clone(),
    })
}

/// Twist the hidden intent asks for at the current pose.
pub fn hidden_velocity(state: &SimState) -> Twist {
    Twist::new(
        eval_pos(&state.hidden_pos, &state.x.p),
        eval_rot(&state.hidden_rot, &state.x.q),
    )
}

/// `sat(K_h (f_hidden(x) - v))`, saturated per component.
pub fn human_wrench(state: &SimState, policy: &HumanPolicy) -> Wrench {
    let err = hidden_velocity(state).to_vector() - state.v.to_vector();
    policy.clamp(&Wrench::from_vector(&policy.gain_vector().component_mul(&err)))
}

/// PD wrench holding the locked dimensions. Orientation locks act on the
/// rotation from the current attitude to the same roll with the locked
/// pitch/yaw.
pub fn lock_wrench(locks: &Locks, x: &Pose, v: &Twist) -> Wrench {
    let mut f = Vector3::zeros();
    if let Some(z) = locks.z {
        f.z = -locks.k_lin * (x.p.z - z) - locks.d_lin * v.lin.z;
    }
    let mut tau = Vector3::zeros();
    if locks.pitch.is_some() || locks.yaw.is_some() {
        let (r, p, y) = x.q.to_rpy();
        let target = UnitQuaternion::from_rpy(r, locks.pitch.unwrap_or(p), locks.yaw.unwrap_or(y));
        let e = log_map(&(target * x.q.conj())).0 * 2.0;
        let t = e * locks.k_rot - v.ang * locks.d_rot;
        if locks.pitch.is_some() {
            tau.y = t.y;
        }
        if locks.yaw.is_some() {
            tau.z = t.z;
        }
    }
    Wrench::new(f, tau)
}
