//! Closed-loop introspection: apparent impedance, storage function and power,
//! and per-trial performance metrics.

use nalgebra::{Matrix3, Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::control::ImpedanceGains;
use crate::estimator::EstimateSnapshot;
use crate::rotmath::log_map;
use crate::types::{Pose, Twist, Wrench};

/// `K = -c Λ Â`.
pub fn apparent_stiffness(c: f64, lambda: &Vector3<f64>, a_hat: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::from_diagonal(&(-c * lambda.component_mul(a_hat)))
}

/// `∂(c(v) Λ v)/∂v = (Λ v) ∇cᵀ + c Λ`. Row `i` holds the derivative of force
/// component `i`.
pub fn apparent_damping(c: f64, lambda: &Vector3<f64>, v: &Vector3<f64>, grad_c: &Vector3<f64>) -> Matrix3<f64> {
    lambda.component_mul(v) * grad_c.transpose() + Matrix3::from_diagonal(&(lambda * c))
}

/// Storage function and power balance of one block (translation or rotation).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    /// `½ vᵀ M v + ½ eᵀ K e`, J.
    pub w: f64,
    /// `vᵀu_h - c E_d - (ċ/2) E_p`, W.
    pub w_dot: f64,
    /// `vᵀ Λ v`
    pub e_d: f64,
    /// `eᵀ Λ Â e`, non-positive for admissible dynamics.
    pub e_p: f64,
    /// `vᵀu_h - Ẇ`; non-negative means passive at this sample.
    pub passivity_margin: f64,
}

/// Ledger for displacement `e` from the estimated attractor.
#[allow(clippy::too_many_arguments)]
pub fn energy_terms(
    m: &Matrix3<f64>,
    v: &Vector3<f64>,
    e: &Vector3<f64>,
    u_h: &Vector3<f64>,
    c: f64,
    c_dot: f64,
    lambda: &Vector3<f64>,
    a_hat: &Vector3<f64>,
) -> EnergyLedger {
    let la = lambda.component_mul(a_hat);
    let k = apparent_stiffness(c, lambda, a_hat);
    let w = 0.5 * v.dot(&(m * v)) + 0.5 * e.dot(&(k * e));
    let e_d = v.dot(&lambda.component_mul(v));
    let e_p = e.dot(&la.component_mul(e));
    let input = v.dot(u_h);
    let w_dot = input - c * e_d - 0.5 * c_dot * e_p;
    EnergyLedger {
        w,
        w_dot,
        e_d,
        e_p,
        passivity_margin: input - w_dot,
    }
}

/// Translational and rotational ledgers. The rotational block uses
/// `log(q ⊗ q̂*⁻¹)` as its displacement.
pub fn energy_audit(
    x: &Pose,
    v: &Twist,
    u_h: &Wrench,
    m: &Matrix6<f64>,
    est: &EstimateSnapshot,
    gains: &ImpedanceGains,
) -> (EnergyLedger, EnergyLedger) {
    let m_lin = m.fixed_view::<3, 3>(0, 0).into_owned();
    let m_rot = m.fixed_view::<3, 3>(3, 3).into_owned();
    let lin = energy_terms(
        &m_lin,
        &v.lin,
        &(x.p - est.pos.attractor),
        &u_h.force,
        est.conf_p.c,
        est.conf_p.c_dot,
        &gains.lambda_p,
        &est.pos.a,
    );
    let e_o = log_map(&(x.q * est.rot.attractor.conj())).0;
    let rot = energy_terms(
        &m_rot,
        &v.ang,
        &e_o,
        &u_h.torque,
        est.conf_o.c,
        est.conf_o.c_dot,
        &gains.lambda_o,
        &est.rot.a,
    );
    (lin, rot)
}

/// Largest confidence rate that keeps the sample passive: `-2 c E_d / E_p`.
/// Infinite when there is no potential term.
pub fn passive_rate_bound(c: f64, e_d: f64, e_p: f64) -> f64 {
    if e_p < 0.0 {
        -2.0 * c * e_d / e_p
    } else {
        f64::INFINITY
    }
}

/// Energy the rising confidence can inject from a rest displacement:
/// `½ |eᵀ Λ Â e|`.
pub fn injection_bound(e_p_at_rise: f64) -> f64 {
    0.5 * e_p_at_rise.abs()
}

/// Goal-reached test for the pose-reaching task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionThresholds {
    /// m
    pub pos: f64,
    /// degrees
    pub rot_deg: f64,
    /// Norm of the stacked linear and angular velocity.
    pub vel: f64,
}

impl Default for CompletionThresholds {
    fn default() -> Self {
        Self {
            pos: 0.13,
            rot_deg: 35.0,
            vel: 0.1,
        }
    }
}

impl CompletionThresholds {
    pub fn reached(&self, x: &Pose, v: &Twist, goal: &Pose) -> bool {
        (x.p - goal.p).norm() < self.pos
            && x.q.angle_to(&goal.q).to_degrees() < self.rot_deg
            && v.norm() < self.vel
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Completed,
    Timeout,
    Fault,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    /// s; the horizon when the goal was never reached.
    pub completion_time: f64,
    /// N·s
    pub lin_impulse: f64,
    /// N·m·s
    pub ang_impulse: f64,
    /// N
    pub avg_force: f64,
    /// N·m
    pub avg_torque: f64,
    pub status: TrialStatus,
}

/// One sample of a human-effort trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffortSample {
    pub t: f64,
    pub x: Pose,
    pub v: Twist,
    pub u_h: Wrench,
}

/// Metrics over samples spaced `dt` apart. Impulses are rectangle sums of
/// `‖f_h‖` and `‖τ_h‖` up to the completion sample, or over the whole trace.
pub fn compute_metrics(
    samples: &[EffortSample],
    dt: f64,
    goal: &Pose,
    thresholds: &CompletionThresholds,
    horizon: f64,
) -> TrialMetrics {
    let done = samples.iter().position(|s| thresholds.reached(&s.x, &s.v, goal));
    let window = match done {
        Some(k) => &samples[..k],
        None => samples,
    };
    let lin_impulse = window.iter().fold(0.0, |acc, s| acc + s.u_h.force.norm() * dt);
    let ang_impulse = window.iter().fold(0.0, |acc, s| acc + s.u_h.torque.norm() * dt);
    let duration = window.len() as f64 * dt;
    let (avg_force, avg_torque) = if duration > 0.0 {
        (lin_impulse / duration, ang_impulse / duration)
    } else {
        (0.0, 0.0)
    };
    let (completion_time, status) = match done {
        Some(k) => (samples[k].t - samples[0].t, TrialStatus::Completed),
        None => (horizon, TrialStatus::Timeout),
    };
    TrialMetrics {
        completion_time,
        lin_impulse,
        ang_impulse,
        avg_force,
        avg_torque,
        status,
    }
}
