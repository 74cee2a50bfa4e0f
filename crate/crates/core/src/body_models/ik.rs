use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DVector, Isometry3, Matrix6, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::chain::SerialChain;
use crate::types::Pose;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IkOptions {
    pub max_iters: usize,
    pub tol_pos: f64,
    pub tol_rot: f64,
    pub n_seeds: usize,
    pub damping: f64,
    /// Largest joint step per iteration, rad.
    pub max_step: f64,
    pub seed: u64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol_pos: 1e-3,
            tol_rot: 1e-2,
            n_seeds: 8,
            damping: 0.02,
            max_step: 0.4,
            seed: 0x5eed,
        }
    }
}

/// Pose error `[p_t - p; rotation vector of R_t R⁻¹]`, world frame.
pub fn pose_error(target: &Isometry3<f64>, current: &Isometry3<f64>) -> Vector6<f64> {
    let dp = target.translation.vector - current.translation.vector;
    let dr = (target.rotation * current.rotation.inverse()).scaled_axis();
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

fn converged(e: &Vector6<f64>, opts: &IkOptions) -> bool {
    e.fixed_rows::<3>(0).norm() < opts.tol_pos && e.fixed_rows::<3>(3).norm() < opts.tol_rot
}

/// One damped-least-squares step `Jᵀ(JJᵀ + λ²I)⁻¹ e`.
pub fn dls_step(j: &nalgebra::Matrix6xX<f64>, e: &Vector6<f64>, damping: f64) -> DVector<f64> {
    let jjt: Matrix6<f64> = j * j.transpose() + Matrix6::identity() * (damping * damping);
    let y = jjt
        .cholesky()
        .map(|c| c.solve(e))
        .unwrap_or_else(Vector6::zeros);
    j.transpose() * y
}

/// Single-start DLS IK with joint clamping. Returns the converged configuration.
pub fn ik_solve(
    chain: &SerialChain,
    target: &Isometry3<f64>,
    start: &DVector<f64>,
    opts: &IkOptions,
) -> Option<DVector<f64>> {
    let mut theta = start.clone();
    chain.clamp_to_limits(&mut theta);
    for _ in 0..=opts.max_iters {
        let f = chain.frames(&theta);
        let e = pose_error(target, &f.ee);
        if converged(&e, opts) {
            return Some(theta);
        }
        let j = chain.jacobian_from_frames(&f);
        let mut step = dls_step(&j, &e, opts.damping);
        let m = step.amax();
        if m > opts.max_step {
            step *= opts.max_step / m;
        }
        theta += step;
        chain.clamp_to_limits(&mut theta);
    }
    None
}

/// Target outside the sphere the chain can possibly reach.
pub fn outside_reach(chain: &SerialChain, target: &Isometry3<f64>) -> bool {
    (target.translation.vector - chain.shoulder()).norm() > chain.reach()
}

/// Multi-start IK: the nominal configuration, then seeded random starts.
pub fn ik_witness(
    chain: &SerialChain,
    target: &Isometry3<f64>,
    opts: &IkOptions,
) -> Option<DVector<f64>> {
    if outside_reach(chain, target) {
        return None;
    }
    if let Some(t) = ik_solve(chain, target, &chain.nominal, opts) {
        return Some(t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 1..opts.n_seeds {
        let start = DVector::from_iterator(
            chain.dof(),
            (0..chain.dof()).map(|i| rng.gen_range(chain.lower[i]..=chain.upper[i])),
        );
        if let Some(t) = ik_solve(chain, target, &start, opts) {
            return Some(t);
        }
    }
    None
}

pub fn ik_feasible(chain: &SerialChain, target: &Pose) -> bool {
    ik_witness(chain, &target.to_isometry(), &IkOptions::default()).is_some()
}

/// Checks a stored witness directly: in limits and within tolerance of the target.
pub fn verify_witness(
    chain: &SerialChain,
    target: &Isometry3<f64>,
    theta: &DVector<f64>,
    opts: &IkOptions,
) -> bool {
    chain.within_limits(theta, 0.0) && converged(&pose_error(target, &chain.fk_isometry(theta)), opts)
}

/// Decides whether a goal pose of the carried object is reachable.
pub trait FeasibilityOracle: Send + Sync {
    fn feasible(&self, goal: &Pose) -> bool;
}

/// Accepts everything; useful when feasibility is not under test.
#[derive(Clone, Copy, Debug, Default)]
pub struct AlwaysFeasible;

impl FeasibilityOracle for AlwaysFeasible {
    fn feasible(&self, _goal: &Pose) -> bool {
        true
    }
}

type VoxelKey = [i32; 6];

/// IK feasibility of object goal poses for a robot holding the object.
///
/// Successful solutions are kept per workspace voxel and used as the first
/// start for nearby queries. A cached witness only speeds up the search: every
/// answer is still a freshly converged IK solution for the exact query.
pub struct GoalReachability {
    chain: Arc<SerialChain>,
    /// Robot tool frame expressed in the object CoM frame.
    com_to_tool: Isometry3<f64>,
    opts: IkOptions,
    pos_voxel: f64,
    rot_voxel: f64,
    cache: RwLock<HashMap<VoxelKey, DVector<f64>>>,
}

impl GoalReachability {
    pub fn new(chain: Arc<SerialChain>, com_to_tool: Pose) -> Self {
        Self {
            chain,
            com_to_tool: com_to_tool.to_isometry(),
            opts: IkOptions::default(),
            pos_voxel: 0.02,
            rot_voxel: 0.1,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn with_options(mut self, opts: IkOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn chain(&self) -> &SerialChain {
        &self.chain
    }

    pub fn tool_target(&self, goal: &Pose) -> Isometry3<f64> {
        goal.to_isometry() * self.com_to_tool
    }

    fn key(&self, t: &Isometry3<f64>) -> VoxelKey {
        let p = t.translation.vector / self.pos_voxel;
        let r: Vector3<f64> = t.rotation.scaled_axis() / self.rot_voxel;
        [
            p.x.floor() as i32,
            p.y.floor() as i32,
            p.z.floor() as i32,
            r.x.floor() as i32,
            r.y.floor() as i32,
            r.z.floor() as i32,
        ]
    }

    /// A joint configuration reaching `goal`, if one is found.
    pub fn witness(&self, goal: &Pose) -> Option<DVector<f64>> {
        let target = self.tool_target(goal);
        if outside_reach(&self.chain, &target) {
            return None;
        }
        let key = self.key(&target);
        let cached = self.cache.read().ok().and_then(|c| c.get(&key).cloned());
        let found = cached
            .and_then(|w| ik_solve(&self.chain, &target, &w, &self.opts))
            .or_else(|| ik_witness(&self.chain, &target, &self.opts));
        if let Some(w) = &found {
            if let Ok(mut c) = self.cache.write() {
                c.insert(key, w.clone());
            }
        }
        found
    }

    pub fn cache_len(&self) -> usize {
        self.cache.read().map(|c| c.len()).unwrap_or(0)
    }
}

impl FeasibilityOracle for GoalReachability {
    fn feasible(&self, goal: &Pose) -> bool {
        self.witness(goal).is_some()
    }
}
