//! Shared helpers for integration tests.

#![allow(dead_code)]

use std::sync::Arc;

use comanip_core::body_models::{manipulability, GoalReachability, HumanArm, RigidObject, SerialChain};
use comanip_core::estimator::{AccelEstimator, DualFilter, FilterConfig, Observation};
use comanip_core::intent_ds::{eval_pos, eval_rot, PosDsParams, RotDsParams};
use comanip_core::rotmath::{integrate, UnitQuaternion};
use comanip_core::Pose;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub struct Recovery {
    pub pos_err: f64,
    pub rot_err_deg: f64,
    pub steps: usize,
}

/// Hidden DS with dynamics drawn from the published ranges and a goal in the
/// x/y/roll task box.
pub fn hidden_intent(rng: &mut impl Rng) -> (PosDsParams, RotDsParams, Pose) {
    let ap = Vector3::from_fn(|_, _| rng.gen_range(-0.6..=-0.4));
    let ao = Vector3::from_fn(|_, _| rng.gen_range(-0.9..=-0.6));
    let goal = Vector3::new(rng.gen_range(0.65..=0.95), rng.gen_range(-0.3..=0.3), 0.3);
    let roll = rng.gen_range(-40f64..=40.0).to_radians();
    let start = Pose::new(
        Vector3::new(rng.gen_range(0.65..=0.95), rng.gen_range(-0.3..=0.3), 0.3),
        UnitQuaternion::from_rpy(rng.gen_range(-40f64..=40.0).to_radians(), 0.0, 0.0),
    );
    (
        PosDsParams::new(ap, goal),
        RotDsParams::new(ao, UnitQuaternion::from_rpy(roll, 0.0, 0.0)),
        start,
    )
}

pub fn robot_oracle() -> GoalReachability {
    GoalReachability::new(
        Arc::new(SerialChain::default_robot()),
        RigidObject::default().tool_in_com(),
    )
}

/// Feeds a filter with samples of a hidden DS rollout (20 Hz, Gaussian
/// velocity noise) and reports the final attractor errors.
pub fn recover(seed: u64, cfg: FilterConfig, steps: usize, sigma: f64) -> Recovery {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hp, ho, start) = hidden_intent(&mut rng);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut filter = DualFilter::new(FilterConfig { rng_seed: seed, ..cfg }).unwrap();
    let oracle = robot_oracle();
    let object = RigidObject::default();
    let arm = HumanArm::new(SerialChain::default_human());
    let e_m: Matrix3<f64> = manipulability(&arm);
    let mut acc_lin = AccelEstimator::new(filter.config().accel_cutoff_hz);
    let mut acc_ang = AccelEstimator::new(filter.config().accel_cutoff_hz);
    let dt_obs = 0.05;
    let sub = 50;
    let h = dt_obs / sub as f64;
    let mut pose = start;
    for _ in 0..steps {
        for _ in 0..sub {
            pose.p += h * eval_pos(&hp, &pose.p);
            pose.q = integrate(&pose.q, &eval_rot(&ho, &pose.q), h).unwrap();
        }
        let mut n3 = || Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
        let v = eval_pos(&hp, &pose.p) + n3();
        let w = eval_rot(&ho, &pose.q) + n3();
        let obs = Observation {
            pose,
            v_lin: v,
            a_lin: acc_lin.update(&v, dt_obs),
            omega: w,
            alpha: acc_ang.update(&w, dt_obs),
            human_hand: object.human_contact(&pose),
        };
        if filter.step(&obs, &e_m, &oracle, dt_obs).is_err() {
            filter.reinitialize();
        }
    }
    let s = filter.snapshot();
    Recovery {
        pos_err: (s.pos.attractor - hp.attractor).norm(),
        rot_err_deg: s.rot.attractor.angle_to(&ho.attractor).to_degrees(),
        steps,
    }
}
