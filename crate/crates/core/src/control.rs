//! Confidence-scaled damping control, gravity compensation and the joint
//! torque layer, plus the admittance baseline used for comparison.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::body_models::SerialChain;
use crate::error::{Error, Result};
use crate::types::{Twist, Wrench};

/// Singular values below this are damped instead of inverted.
pub const PINV_THRESHOLD: f64 = 1e-6;

/// Diagonals of Λ_p (N·s/m) and Λ_o (N·m·s/rad).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpedanceGains {
    pub lambda_p: Vector3<f64>,
    pub lambda_o: Vector3<f64>,
}

impl Default for ImpedanceGains {
    fn default() -> Self {
        Self {
            lambda_p: Vector3::repeat(85.0),
            lambda_o: Vector3::repeat(13.0),
        }
    }
}

impl ImpedanceGains {
    pub fn validate(&self) -> Result<()> {
        if self
            .lambda_p
            .iter()
            .chain(self.lambda_o.iter())
            .all(|d| *d > 0.0 && d.is_finite())
        {
            Ok(())
        } else {
            Err(Error::Config("damping gains must be positive".into()))
        }
    }

    /// `D_p(c) = c Λ_p`.
    pub fn damping_pos(&self, c_p: f64) -> Matrix3<f64> {
        Matrix3::from_diagonal(&(self.lambda_p * c_p))
    }

    pub fn damping_rot(&self, c_o: f64) -> Matrix3<f64> {
        Matrix3::from_diagonal(&(self.lambda_o * c_o))
    }
}

/// `-blockdiag(c_p Λ_p, c_o Λ_o) (v - v̂)`.
pub fn u_ds(v_actual: &Twist, v_est: &Twist, c_p: f64, c_o: f64, gains: &ImpedanceGains) -> Wrench {
    Wrench::new(
        -(gains.damping_pos(c_p) * (v_actual.lin - v_est.lin)),
        -(gains.damping_rot(c_o) * (v_actual.ang - v_est.ang)),
    )
}

/// `u_r = g_r + G_r^{-T} (g_l + u_ds)`, where `grasp_t` is `G_rᵀ`, the map
/// from the robot contact wrench to the object CoM wrench.
pub fn desired_wrench(u_ds: &Wrench, g_r: &Wrench, g_l: &Wrench, grasp_t: &Matrix6<f64>) -> Result<Wrench> {
    let rhs = g_l.to_vector() + u_ds.to_vector();
    let lu = grasp_t.lu();
    if !lu.is_invertible() || grasp_t.determinant().abs() < 1e-12 {
        return Err(Error::SingularGrasp);
    }
    let y = lu.solve(&rhs).ok_or(Error::SingularGrasp)?;
    Ok(Wrench::from_vector(&(g_r.to_vector() + y)))
}

/// Repulsion near joint limits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointLimitConfig {
    /// N·m·rad²
    pub eta9: f64,
    /// Activation margins from the lower and upper limit, rad.
    pub margin_lo: f64,
    pub margin_hi: f64,
}

impl Default for JointLimitConfig {
    fn default() -> Self {
        Self {
            eta9: 0.1,
            margin_lo: 0.1,
            margin_hi: 0.1,
        }
    }
}

impl JointLimitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta9 > 0.0 && self.margin_lo > 0.0 && self.margin_hi > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("joint limit gain and margins must be positive".into()))
        }
    }
}

/// Distances at or past a limit are evaluated here so the torque stays finite.
const MIN_LIMIT_DISTANCE: f64 = 1e-3;

fn repulsion(eta9: f64, dist: f64, margin: f64) -> f64 {
    if dist > margin {
        return 0.0;
    }
    let d = dist.max(MIN_LIMIT_DISTANCE);
    eta9 * (1.0 / d - 1.0 / margin) / (d * d)
}

/// Per joint: `η₉(1/Δ - 1/δ)/Δ²` pushing away from whichever limit is within
/// its margin. `Δ` is the unsigned distance to that limit.
pub fn joint_limit_torque(chain: &SerialChain, theta: &DVector<f64>, cfg: &JointLimitConfig) -> DVector<f64> {
    let (d_lo, d_hi) = chain.joint_limit_distances(theta);
    DVector::from_iterator(
        theta.len(),
        (0..theta.len()).map(|i| {
            repulsion(cfg.eta9, d_lo[i], cfg.margin_lo) - repulsion(cfg.eta9, -d_hi[i], cfg.margin_hi)
        }),
    )
}

/// Posture task: `-(θ - θ_N) - θ̇`.
pub fn nullspace_torque(theta: &DVector<f64>, theta_dot: &DVector<f64>, theta_n: &DVector<f64>) -> DVector<f64> {
    -(theta - theta_n) - theta_dot
}

/// SVD pseudo-inverse. Singular values under [`PINV_THRESHOLD`] are inverted
/// as `σ/(σ² + t²)`. The flag reports whether that happened.
pub fn damped_pinv(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let vt = svd.v_t.expect("svd computed with v_t");
    let mut degraded = false;
    let inv = DVector::from_iterator(
        svd.singular_values.len(),
        svd.singular_values.iter().map(|&s| {
            if s >= PINV_THRESHOLD {
                1.0 / s
            } else {
                degraded = true;
                s / (s * s + PINV_THRESHOLD * PINV_THRESHOLD)
            }
        }),
    );
    (vt.transpose() * DMatrix::from_diagonal(&inv) * u.transpose(), degraded)
}

/// `Jᵀ†`, the 6×n map from joint torques to the end-effector wrench.
pub fn jacobian_transpose_pinv(j: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    damped_pinv(&j.transpose())
}

/// `N = I - Jᵀ Jᵀ†`.
pub fn nullspace_projector(j: &DMatrix<f64>) -> DMatrix<f64> {
    let (jt_pinv, _) = jacobian_transpose_pinv(j);
    DMatrix::identity(j.ncols(), j.ncols()) - j.transpose() * jt_pinv
}

#[derive(Clone, Debug, PartialEq)]
pub struct TorqueCommand {
    pub tau: DVector<f64>,
    pub tau_lim: DVector<f64>,
    pub tau_null: DVector<f64>,
    /// Tool wrench the torques produce, `Jᵀ† τ`.
    pub applied: Wrench,
    /// The Jacobian was close to singular and the pseudo-inverse was damped.
    pub degraded: bool,
}

/// `τ = τ_lim + N τ_N + Jᵀ u_r`.
pub fn total_torque(
    chain: &SerialChain,
    theta: &DVector<f64>,
    theta_dot: &DVector<f64>,
    u_r: &Wrench,
    cfg: &JointLimitConfig,
) -> TorqueCommand {
    let j = DMatrix::from_column_slice(6, chain.dof(), chain.jacobian(theta).as_slice());
    let (jt_pinv, degraded) = jacobian_transpose_pinv(&j);
    let n = DMatrix::identity(chain.dof(), chain.dof()) - j.transpose() * &jt_pinv;
    let tau_lim = joint_limit_torque(chain, theta, cfg);
    let tau_null = &n * nullspace_torque(theta, theta_dot, &chain.nominal);
    let w = DVector::from_column_slice(u_r.to_vector().as_slice());
    let tau = &tau_lim + &tau_null + j.transpose() * w;
    let applied = &jt_pinv * &tau;
    TorqueCommand {
        applied: Wrench::new(
            Vector3::new(applied[0], applied[1], applied[2]),
            Vector3::new(applied[3], applied[4], applied[5]),
        ),
        tau,
        tau_lim,
        tau_null,
        degraded,
    }
}

/// Virtual mass-damper of the admittance baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmittanceParams {
    pub mass_lin: f64,
    pub mass_rot: f64,
    pub damping_lin: f64,
    pub damping_rot: f64,
    /// Caps on the commanded linear (m/s, m/s²) and angular (rad/s, rad/s²) norms.
    pub max_vel: f64,
    pub max_acc: f64,
}

impl Default for AdmittanceParams {
    fn default() -> Self {
        Self {
            mass_lin: 10.0,
            mass_rot: 2.0,
            damping_lin: 30.0,
            damping_rot: 5.0,
            max_vel: 0.8,
            max_acc: 1.0,
        }
    }
}

impl AdmittanceParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mass_lin,
            self.mass_rot,
            self.damping_lin,
            self.damping_rot,
            self.max_vel,
            self.max_acc,
        ];
        if all.iter().all(|x| *x > 0.0 && x.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("admittance parameters must be positive".into()))
        }
    }
}

fn cap(v: Vector3<f64>, max: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// One step of `M v̇ = u_ext - D v` from the last commanded twist, with the
/// acceleration and then the velocity norms clamped.
pub fn admittance_baseline(v_cmd: &Twist, u_ext: &Wrench, p: &AdmittanceParams, dt: f64) -> Twist {
    let acc_lin = cap((u_ext.force - v_cmd.lin * p.damping_lin) / p.mass_lin, p.max_acc);
    let acc_ang = cap((u_ext.torque - v_cmd.ang * p.damping_rot) / p.mass_rot, p.max_acc);
    Twist::new(
        cap(v_cmd.lin + acc_lin * dt, p.max_vel),
        cap(v_cmd.ang + acc_ang * dt, p.max_vel),
    )
}
