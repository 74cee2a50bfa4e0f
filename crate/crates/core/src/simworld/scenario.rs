use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::analysis::CompletionThresholds;
use crate::body_models::RigidObject;
use crate::control::{AdmittanceParams, ImpedanceGains, JointLimitConfig};
use crate::error::{Error, Result};
use crate::estimator::FilterConfig;
use crate::intent_ds::{check_gas, PosDsParams, RotDsParams};
use crate::rotmath::UnitQuaternion;
use crate::types::{Pose, Wrench};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// Confidence-scaled damping around the estimated intent.
    Proposed,
    /// Virtual mass-damper driven by the measured human wrench.
    Admittance,
    /// The damping law around the true goal with mid-range dynamics and
    /// full confidence. An idealized reference, not an estimator.
    FixedGoalDs,
}

impl ControllerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Proposed => "proposed",
            Self::Admittance => "admittance",
            Self::FixedGoalDs => "fixed_goal_ds",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Self::Proposed),
            "admittance" => Ok(Self::Admittance),
            "fixed_goal_ds" => Ok(Self::FixedGoalDs),
            other => Err(Error::Config(format!("unknown controller `{other}`"))),
        }
    }
}

/// When a hidden intent becomes active.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// At this simulated time, s.
    At(f64),
    /// Once the previous goal has been reached.
    Reached,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSegment {
    pub trigger: Trigger,
    pub pos: PosDsParams,
    pub rot: RotDsParams,
}

impl GoalSegment {
    pub fn goal(&self) -> Pose {
        Pose::new(self.pos.attractor, self.rot.attractor)
    }
}

/// Scripted human: `sat(K_h (f_hidden(x) - v))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanPolicy {
    /// Diagonal of K_h: N·s/m for the first three entries, N·m·s/rad after.
    pub gain: [f64; 6],
    /// N, per component.
    pub f_max: f64,
    /// N·m, per component.
    pub tau_max: f64,
}

impl Default for HumanPolicy {
    fn default() -> Self {
        Self {
            gain: [100.0, 100.0, 100.0, 5.0, 5.0, 5.0],
            f_max: 30.0,
            tau_max: 3.0,
        }
    }
}

impl HumanPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.gain.iter().any(|k| !(*k >= 0.0) || !k.is_finite()) {
            return Err(Error::Config("human gains must be non-negative".into()));
        }
        if !(self.f_max > 0.0 && self.tau_max > 0.0) {
            return Err(Error::Config("human saturation limits must be positive".into()));
        }
        Ok(())
    }

    pub fn gain_vector(&self) -> Vector6<f64> {
        Vector6::from_column_slice(&self.gain)
    }

    pub fn clamp(&self, w: &Wrench) -> Wrench {
        Wrench::new(
            w.force.map(|f| f.clamp(-self.f_max, self.f_max)),
            w.torque.map(|t| t.clamp(-self.tau_max, self.tau_max)),
        )
    }
}

/// Stiff PD holds on dimensions outside the task. `None` leaves a dimension free.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Locks {
    /// Height of the CoM, m.
    pub z: Option<f64>,
    /// Pitch and yaw targets, rad.
    pub pitch: Option<f64>,
    pub yaw: Option<f64>,
    pub k_lin: f64,
    pub d_lin: f64,
    pub k_rot: f64,
    pub d_rot: f64,
}

impl Default for Locks {
    fn default() -> Self {
        Self {
            z: Some(0.3),
            pitch: Some(0.0),
            yaw: Some(0.0),
            k_lin: 2000.0,
            d_lin: 200.0,
            k_rot: 100.0,
            d_rot: 15.0,
        }
    }
}

impl Locks {
    pub fn none() -> Self {
        Self {
            z: None,
            pitch: None,
            yaw: None,
            ..Self::default()
        }
    }

    /// Mask of locked twist components, `[x, y, z, ωx, ωy, ωz]`.
    pub fn mask(&self) -> [bool; 6] {
        [
            false,
            false,
            self.z.is_some(),
            false,
            self.pitch.is_some(),
            self.yaw.is_some(),
        ]
    }
}

/// Velocity tracking gains the admittance baseline uses to follow its
/// commanded twist.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingGains {
    pub k_lin: f64,
    pub k_rot: f64,
}

impl Default for TrackingGains {
    fn default() -> Self {
        Self {
            k_lin: 500.0,
            k_rot: 50.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    /// Control period, s.
    pub dt_ctrl: f64,
    /// Estimator runs every this many control ticks.
    pub est_every: u32,
    /// s
    pub horizon: f64,
    /// Standard deviation of the Gaussian noise on observed velocities.
    pub velocity_noise: f64,
    /// Apparent robot mass added to the load, world frame, `[kg ×3, kg·m² ×3]`.
    pub robot_mass: [f64; 6],
    /// Robot gravity wrench at the tool.
    pub robot_gravity: Wrench,
    pub object: RigidObject,
    /// Kinematic tracking of the robot shadow arm: a step fails when the
    /// tool error exceeds these after the IK iterations, m and rad.
    pub shadow_tol_pos: f64,
    pub shadow_tol_rot: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt_ctrl: 0.005,
            est_every: 10,
            horizon: 30.0,
            velocity_noise: 0.01,
            robot_mass: [5.0, 5.0, 5.0, 0.5, 0.5, 0.5],
            robot_gravity: Wrench::zero(),
            object: RigidObject::default(),
            shadow_tol_pos: 1e-3,
            shadow_tol_rot: 1e-2,
        }
    }
}

/// Everything one episode needs. Loaded from JSON; unknown fields are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub start: Pose,
    /// Hidden intent schedule. The first entry must trigger at time 0.
    pub goals: Vec<GoalSegment>,
    #[serde(default = "default_controller")]
    pub controller: ControllerKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub human: HumanPolicy,
    #[serde(default)]
    pub locks: Locks,
    #[serde(default)]
    pub gains: ImpedanceGains,
    #[serde(default)]
    pub admittance: AdmittanceParams,
    #[serde(default)]
    pub tracking: TrackingGains,
    #[serde(default)]
    pub joint_limits: JointLimitConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub completion: CompletionThresholds,
    #[serde(default)]
    pub sim: SimParams,
}

fn default_controller() -> ControllerKind {
    ControllerKind::Proposed
}

impl Scenario {
    /// The x/y/roll reaching task from `start` to a single hidden goal.
    pub fn reaching(start: Pose, pos: PosDsParams, rot: RotDsParams) -> Self {
        Self {
            name: "reaching".into(),
            start,
            goals: vec![GoalSegment {
                trigger: Trigger::At(0.0),
                pos,
                rot,
            }],
            controller: ControllerKind::Proposed,
            seed: 0,
            human: HumanPolicy::default(),
            locks: Locks::default(),
            gains: ImpedanceGains::default(),
            admittance: AdmittanceParams::default(),
            tracking: TrackingGains::default(),
            joint_limits: JointLimitConfig::default(),
            filter: FilterConfig::default(),
            completion: CompletionThresholds::default(),
            sim: SimParams::default(),
        }
    }

    /// Default start pose of the reaching task.
    pub fn default_start() -> Pose {
        Pose::new(Vector3::new(0.8, 0.0, 0.3), UnitQuaternion::identity())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let sc: Self = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !self.start.is_finite() {
            return bad("start pose is not finite".into());
        }
        match self.goals.first() {
            None => return bad("scenario needs at least one goal".into()),
            Some(g) if g.trigger != Trigger::At(0.0) => {
                return bad("the first goal must trigger at time 0".into())
            }
            _ => {}
        }
        let mut last_t = 0.0;
        for (i, g) in self.goals.iter().enumerate() {
            if !check_gas(&g.pos) || !check_gas(&g.rot) || !g.goal().is_finite() {
                return bad(format!("goal {i} is not a stable finite DS"));
            }
            if let Trigger::At(t) = g.trigger {
                if !(t >= last_t) {
                    return bad(format!("goal {i} triggers before its predecessor"));
                }
                last_t = t;
            }
        }
        let s = &self.sim;
        if !(s.dt_ctrl > 0.0 && s.dt_ctrl <= 0.01) {
            return bad(format!("dt_ctrl must lie in (0, 0.01], got {}", s.dt_ctrl));
        }
        if s.est_every == 0 || !(s.horizon > 0.0) || !(s.velocity_noise >= 0.0) {
            return bad("est_every, horizon and velocity_noise are out of range".into());
        }
        if s.robot_mass.iter().any(|m| !(*m >= 0.0)) {
            return bad("robot_mass entries must be non-negative".into());
        }
        if !(s.shadow_tol_pos > 0.0 && s.shadow_tol_rot > 0.0) {
            return bad("shadow tolerances must be positive".into());
        }
        s.object.validate()?;
        self.human.validate()?;
        self.gains.validate()?;
        self.admittance.validate()?;
        self.joint_limits.validate()?;
        self.filter.validate()?;
        let l = &self.locks;
        if [l.k_lin, l.d_lin, l.k_rot, l.d_rot].iter().any(|k| !(*k >= 0.0)) {
            return bad("lock gains must be non-negative".into());
        }
        if !(self.tracking.k_lin > 0.0 && self.tracking.k_rot > 0.0) {
            return bad("tracking gains must be positive".into());
        }
        Ok(())
    }
}
