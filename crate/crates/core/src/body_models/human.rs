use nalgebra::{DVector, Matrix3, Vector3};

use super::chain::SerialChain;
use super::ik::dls_step;

/// Regularizer added to `J Jᵀ` so the ellipsoid is strictly positive definite.
pub const MANIPULABILITY_EPS: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct HumanArm {
    pub chain: SerialChain,
    pub theta: DVector<f64>,
}

impl HumanArm {
    pub fn new(chain: SerialChain) -> Self {
        let theta = chain.nominal.clone();
        Self { chain, theta }
    }

    pub fn hand_position(&self) -> Vector3<f64> {
        self.chain.fk_isometry(&self.theta).translation.vector
    }

    /// Moves the joints toward a hand position with a few DLS iterations.
    /// Best effort: the arm stops at its limits if the target is out of reach.
    /// Returns the remaining position error.
    pub fn track_position(&mut self, target: &Vector3<f64>, iters: usize) -> f64 {
        let mut err = f64::INFINITY;
        for _ in 0..iters {
            let f = self.chain.frames(&self.theta);
            let e3 = target - f.ee.translation.vector;
            err = e3.norm();
            if err < 1e-5 {
                break;
            }
            let j = self.chain.jacobian_from_frames(&f);
            // Position-only task: zero the angular rows and error.
            let mut jp = j.clone();
            jp.fixed_rows_mut::<3>(3).fill(0.0);
            let e = nalgebra::Vector6::new(e3.x, e3.y, e3.z, 0.0, 0.0, 0.0);
            self.theta += dls_step(&jp, &e, 0.05);
            self.chain.clamp_to_limits(&mut self.theta);
        }
        err
    }
}

/// Positional manipulability ellipsoid `J_pos J_posᵀ + εI`, symmetrized.
pub fn manipulability(arm: &HumanArm) -> Matrix3<f64> {
    manipulability_at(&arm.chain, &arm.theta)
}

pub fn manipulability_at(chain: &SerialChain, theta: &DVector<f64>) -> Matrix3<f64> {
    let jp = chain.jacobian_pos(theta);
    let e = &jp * jp.transpose();
    (e + e.transpose()) * 0.5 + Matrix3::identity() * MANIPULABILITY_EPS
}

/// Blend `(1 - μ)I + μE` with `μ = exp(-η₅‖p* - x_h‖²)`.
pub fn local_ellipsoid(
    e: &Matrix3<f64>,
    p_star: &Vector3<f64>,
    x_h: &Vector3<f64>,
    eta5: f64,
) -> Matrix3<f64> {
    let mu = (-eta5 * (p_star - x_h).norm_squared()).exp();
    Matrix3::identity() * (1.0 - mu) + e * mu
}
