//! Linear goal-oriented dynamical systems used as the intent hypothesis.
//!
//! Position: `ẋ = A_p (x - p*)`. Orientation: `ω = A_o k_q log(q ⊗ q̄*)`,
//! where the `k_q` factor turns the log into the vector part of the error
//! quaternion, which is what makes the rotational system globally stable.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::rotmath::{log_map, UnitQuaternion};

/// Diagonal of `A_p` (1/s) and the attractor position (m).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosDsParams {
    pub a: Vector3<f64>,
    pub attractor: Vector3<f64>,
}

/// Diagonal of `A_o` (1/s) and the attractor orientation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotDsParams {
    pub a: Vector3<f64>,
    pub attractor: UnitQuaternion,
}

impl PosDsParams {
    pub fn new(a: Vector3<f64>, attractor: Vector3<f64>) -> Self {
        Self { a, attractor }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.a)
    }
}

impl RotDsParams {
    pub fn new(a: Vector3<f64>, attractor: UnitQuaternion) -> Self {
        Self { a, attractor }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.a)
    }
}

/// Common view of both parameter kinds, used by the GAS check.
pub trait DsParams {
    fn diagonal(&self) -> &Vector3<f64>;
}

impl DsParams for PosDsParams {
    fn diagonal(&self) -> &Vector3<f64> {
        &self.a
    }
}

impl DsParams for RotDsParams {
    fn diagonal(&self) -> &Vector3<f64> {
        &self.a
    }
}

pub fn eval_pos(params: &PosDsParams, x: &Vector3<f64>) -> Vector3<f64> {
    params.a.component_mul(&(x - params.attractor))
}

/// `‖vec(q ⊗ q̄*)‖ / arccos(scalar(q ⊗ q̄*))`, equal to 1 at the attractor.
pub fn k_q(q: &UnitQuaternion, q_star: &UnitQuaternion) -> f64 {
    let e = *q * q_star.conj();
    if e.s() > 1.0 - 1e-12 {
        return 1.0;
    }
    let n = e.u().norm();
    // atan2 is arccos on the unit sphere with better conditioning.
    n / n.atan2(e.s())
}

pub fn eval_rot(params: &RotDsParams, q: &UnitQuaternion) -> Vector3<f64> {
    let e = *q * params.attractor.conj();
    let k = k_q(q, &params.attractor);
    params.a.component_mul(&(k * log_map(&e).0))
}

/// Closed form `A_o vec(q ⊗ q̄*)`; equal to [`eval_rot`].
pub fn eval_rot_vec(params: &RotDsParams, q: &UnitQuaternion) -> Vector3<f64> {
    let e = *q * params.attractor.conj();
    params.a.component_mul(e.u())
}

/// True iff every diagonal entry is strictly negative (and finite).
/// Diagonal storage makes the matrix symmetric by construction.
pub fn check_gas<P: DsParams + ?Sized>(params: &P) -> bool {
    params.diagonal().iter().all(|a| a.is_finite() && *a < 0.0)
}

/// `V_p = ½‖x - p*‖²`.
pub fn lyapunov_pos(params: &PosDsParams, x: &Vector3<f64>) -> f64 {
    0.5 * (x - params.attractor).norm_squared()
}

/// `V_o = (s* - s)² + ‖u* - u‖²`, with `q` taken on the same hemisphere as `q*`.
pub fn lyapunov_rot(params: &RotDsParams, q: &UnitQuaternion) -> f64 {
    let qs = params.attractor.coords();
    let mut qc = q.coords();
    if qc.dot(&qs) < 0.0 {
        qc = -qc;
    }
    (qs - qc).norm_squared()
}

/// Analytic `V̇_o = vec(q* ⊗ q̄)ᵀ A_o vec(q* ⊗ q̄)`.
pub fn lyapunov_rot_rate(params: &RotDsParams, q: &UnitQuaternion) -> f64 {
    let e = params.attractor * q.conj();
    e.u().dot(&params.a.component_mul(e.u()))
}
