//! Batches of seeded reaching trials, their aggregate statistics and
//! boxplot-ready quantile tables.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{CompletionThresholds, TrialMetrics, TrialStatus};
use crate::body_models::{GoalReachability, SerialChain};
use crate::control::{AdmittanceParams, ImpedanceGains, JointLimitConfig};
use crate::error::{Error, Result};
use crate::estimator::FilterConfig;
use crate::intent_ds::{PosDsParams, RotDsParams};
use crate::rotmath::UnitQuaternion;
use crate::simworld::{
    run_episode, write_csv, ControllerKind, GoalSegment, HumanPolicy, Locks, Scenario, SimParams, TrackingGains,
    Trigger,
};
use crate::types::Pose;

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    fn valid(&self) -> bool {
        self.0.is_finite() && self.1.is_finite() && self.0 <= self.1
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.0 == self.1 {
            self.0
        } else {
            rng.gen_range(self.0..=self.1)
        }
    }
}

/// Task box the hidden goals are drawn from, uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalBox {
    /// m
    pub x: Range,
    pub y: Range,
    /// degrees
    pub roll_deg: Range,
    /// Fixed goal height, m.
    pub z: f64,
}

impl Default for GoalBox {
    fn default() -> Self {
        Self {
            x: Range(0.65, 0.95),
            y: Range(-0.3, 0.3),
            roll_deg: Range(-40.0, 40.0),
            z: 0.3,
        }
    }
}

/// An explicit goal in the task coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskGoal {
    pub x: f64,
    pub y: f64,
    pub roll_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_controllers")]
    pub controllers: Vec<ControllerKind>,
    pub n_trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "Scenario::default_start")]
    pub start: Pose,
    #[serde(default)]
    pub goal_box: GoalBox,
    /// Sampled goals closer than this to the start are redrawn, m.
    #[serde(default = "default_min_goal_distance")]
    pub min_goal_distance: f64,
    /// Used in order instead of sampling, when present.
    #[serde(default)]
    pub goals: Option<Vec<TaskGoal>>,
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

fn default_controllers() -> Vec<ControllerKind> {
    vec![ControllerKind::Proposed, ControllerKind::Admittance]
}

fn default_min_goal_distance() -> f64 {
    0.2
}

impl ExperimentConfig {
    pub fn new(n_trials: usize, seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({ "n_trials": n_trials, "seed": seed }))
            .expect("defaults deserialize")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.n_trials == 0 || self.n_trials > 100_000 {
            return bad("n_trials must lie in [1, 100000]");
        }
        if self.controllers.is_empty() {
            return bad("at least one controller is required");
        }
        let b = &self.goal_box;
        if !(b.x.valid() && b.y.valid() && b.roll_deg.valid() && b.z.is_finite()) {
            return bad("goal box ranges must be finite with lo <= hi");
        }
        if !(b.roll_deg.0 > -180.0 && b.roll_deg.1 < 180.0) {
            return bad("goal roll must lie strictly within (-180, 180) degrees");
        }
        if !(self.min_goal_distance >= 0.0) {
            return bad("min_goal_distance must be non-negative");
        }
        if let Some(g) = &self.goals {
            if g.len() < self.n_trials {
                return bad("explicit goal list is shorter than n_trials");
            }
        }
        // Everything else is checked by the scenario of the first trial.
        self.scenario(
            ControllerKind::Proposed,
            &TrialPlan {
                trial: 0,
                seed: 0,
                goal: TaskGoal {
                    x: b.x.0,
                    y: b.y.0,
                    roll_deg: b.roll_deg.0,
                },
                a_pos: Vector3::repeat(self.filter.a_bounds_pos.mid()),
                a_rot: Vector3::repeat(self.filter.a_bounds_rot.mid()),
            },
        )
        .validate()
    }

    fn scenario(&self, controller: ControllerKind, plan: &TrialPlan) -> Scenario {
        let g = plan.goal;
        Scenario {
            name: format!("{}#{}", self.name, plan.trial),
            start: self.start,
            goals: vec![GoalSegment {
                trigger: Trigger::At(0.0),
                pos: PosDsParams::new(plan.a_pos, Vector3::new(g.x, g.y, self.goal_box.z)),
                rot: RotDsParams::new(plan.a_rot, UnitQuaternion::from_rpy(g.roll_deg.to_radians(), 0.0, 0.0)),
            }],
            controller,
            seed: plan.seed,
            human: self.human,
            locks: self.locks,
            gains: self.gains,
            admittance: self.admittance,
            tracking: self.tracking,
            joint_limits: self.joint_limits,
            filter: self.filter.clone(),
            completion: self.completion,
            sim: self.sim.clone(),
        }
    }
}

/// Goal, hidden dynamics and seed of one trial, shared by every controller.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialPlan {
    pub trial: usize,
    pub seed: u64,
    pub goal: TaskGoal,
    pub a_pos: Vector3<f64>,
    pub a_rot: Vector3<f64>,
}

const MAX_GOAL_DRAWS: usize = 10_000;

/// Draws the trial set. Sampled goals must be reachable by the robot and at
/// least `min_goal_distance` from the start.
pub fn plan_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialPlan>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let oracle = GoalReachability::new(Arc::new(SerialChain::default_robot()), cfg.sim.object.tool_in_com());
    let (ap, ao) = (cfg.filter.a_bounds_pos, cfg.filter.a_bounds_rot);
    let b = cfg.goal_box;
    let mut out = Vec::with_capacity(cfg.n_trials);
    for trial in 0..cfg.n_trials {
        let seed = rng.gen::<u64>();
        let a_pos = Vector3::from_fn(|_, _| rng.gen_range(ap.low..=ap.high));
        let a_rot = Vector3::from_fn(|_, _| rng.gen_range(ao.low..=ao.high));
        let goal = match &cfg.goals {
            Some(list) => list[trial],
            None => {
                let mut draws = 0;
                loop {
                    draws += 1;
                    if draws > MAX_GOAL_DRAWS {
                        return Err(Error::Config("goal box has no admissible goals".into()));
                    }
                    let g = TaskGoal {
                        x: b.x.sample(&mut rng),
                        y: b.y.sample(&mut rng),
                        roll_deg: b.roll_deg.sample(&mut rng),
                    };
                    let pose = Pose::new(
                        Vector3::new(g.x, g.y, b.z),
                        UnitQuaternion::from_rpy(g.roll_deg.to_radians(), 0.0, 0.0),
                    );
                    if (pose.p - cfg.start.p).norm() >= cfg.min_goal_distance && oracle.witness(&pose).is_some() {
                        break g;
                    }
                }
            }
        };
        out.push(TrialPlan {
            trial,
            seed,
            goal,
            a_pos,
            a_rot,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub controller: ControllerKind,
    pub trial: usize,
    pub seed: u64,
    pub goal: TaskGoal,
    pub metrics: TrialMetrics,
    pub fault: Option<String>,
}

/// Mean and quartiles of one metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        let s = sorted(values);
        if s.is_empty() {
            return None;
        }
        Some(Self {
            mean: s.iter().sum::<f64>() / s.len() as f64,
            q1: quantile_sorted(&s, 0.25),
            median: quantile_sorted(&s, 0.5),
            q3: quantile_sorted(&s, 0.75),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub controller: ControllerKind,
    pub n_trials: usize,
    pub completed: usize,
    pub faults: usize,
    pub completion_rate: f64,
    /// Timed-out and faulted trials count at the horizon.
    pub completion_time: Stats,
    pub lin_impulse: Stats,
    pub ang_impulse: Stats,
    pub avg_force: Stats,
    pub avg_torque: Stats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub name: String,
    pub seed: u64,
    pub n_trials: usize,
    pub methods: Vec<MethodSummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchResult {
    pub summary: BatchSummary,
    /// Grouped by controller in config order, then by trial.
    pub trials: Vec<TrialRecord>,
}

/// The metrics tabulated per method, with their accessors.
pub const METRICS: [(&str, fn(&TrialMetrics) -> f64); 5] = [
    ("completion_time", |m| m.completion_time),
    ("lin_impulse", |m| m.lin_impulse),
    ("ang_impulse", |m| m.ang_impulse),
    ("avg_force", |m| m.avg_force),
    ("avg_torque", |m| m.avg_torque),
];

fn summarize(controller: ControllerKind, trials: &[&TrialRecord]) -> MethodSummary {
    let stat = |f: fn(&TrialMetrics) -> f64| {
        let v: Vec<f64> = trials.iter().map(|t| f(&t.metrics)).collect();
        Stats::of(&v).expect("at least one trial")
    };
    let completed = trials
        .iter()
        .filter(|t| t.metrics.status == TrialStatus::Completed)
        .count();
    MethodSummary {
        controller,
        n_trials: trials.len(),
        completed,
        faults: trials.iter().filter(|t| t.metrics.status == TrialStatus::Fault).count(),
        completion_rate: completed as f64 / trials.len() as f64,
        completion_time: stat(METRICS[0].1),
        lin_impulse: stat(METRICS[1].1),
        ang_impulse: stat(METRICS[2].1),
        avg_force: stat(METRICS[3].1),
        avg_torque: stat(METRICS[4].1),
    }
}

fn fault_metrics(horizon: f64) -> TrialMetrics {
    TrialMetrics {
        completion_time: horizon,
        lin_impulse: 0.0,
        ang_impulse: 0.0,
        avg_force: 0.0,
        avg_torque: 0.0,
        status: TrialStatus::Fault,
    }
}

/// Runs every controller on the same trial set in parallel. With `log_dir`
/// set, each trial's tick log is written there as `<controller>_<trial>.csv`.
/// Trial faults are recorded, not returned.
pub fn run_batch(cfg: &ExperimentConfig, log_dir: Option<&Path>) -> Result<BatchResult> {
    cfg.validate()?;
    let plans = plan_trials(cfg)?;
    if let Some(dir) = log_dir {
        std::fs::create_dir_all(dir)?;
    }
    let jobs: Vec<(ControllerKind, TrialPlan)> = cfg
        .controllers
        .iter()
        .flat_map(|c| plans.iter().map(move |p| (*c, *p)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|(controller, plan)| -> Result<TrialRecord> {
            let sc = cfg.scenario(*controller, plan);
            let (metrics, fault) = match run_episode(&sc) {
                Ok(tr) => {
                    if let Some(dir) = log_dir {
                        let path = dir.join(format!("{}_{:03}.csv", controller.as_str(), plan.trial));
                        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
                        write_csv(&tr.ticks, &mut w)?;
                        w.flush()?;
                    }
                    (tr.metrics, tr.fault)
                }
                Err(e) => (fault_metrics(cfg.sim.horizon), Some(e.to_string())),
            };
            Ok(TrialRecord {
                controller: *controller,
                trial: plan.trial,
                seed: plan.seed,
                goal: plan.goal,
                metrics,
                fault,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let methods = cfg
        .controllers
        .iter()
        .map(|c| {
            let mine: Vec<&TrialRecord> = trials.iter().filter(|t| t.controller == *c).collect();
            summarize(*c, &mine)
        })
        .collect();
    Ok(BatchResult {
        summary: BatchSummary {
            name: cfg.name.clone(),
            seed: cfg.seed,
            n_trials: cfg.n_trials,
            methods,
        },
        trials,
    })
}

pub fn summary_json(summary: &BatchSummary) -> Result<String> {
    Ok(serde_json::to_string_pretty(summary)? + "\n")
}

const TRIAL_HEADER: &str =
    "controller,trial,seed,goal_x,goal_y,goal_roll_deg,status,completion_time,lin_impulse,ang_impulse,avg_force,avg_torque,fault";

pub fn trials_csv(trials: &[TrialRecord]) -> String {
    let mut s = String::from(TRIAL_HEADER);
    s.push('\n');
    for t in trials {
        let m = &t.metrics;
        let status = match m.status {
            TrialStatus::Completed => "completed",
            TrialStatus::Timeout => "timeout",
            TrialStatus::Fault => "fault",
        };
        let fault = t.fault.as_deref().unwrap_or("").replace([',', '\n', '\r'], ";");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            t.controller.as_str(),
            t.trial,
            t.seed,
            t.goal.x,
            t.goal.y,
            t.goal.roll_deg,
            status,
            m.completion_time,
            m.lin_impulse,
            m.ang_impulse,
            m.avg_force,
            m.avg_torque,
            fault
        );
    }
    s
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear interpolation between order statistics at rank `p (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One boxplot: whiskers at the most extreme values within 1.5 IQR of the
/// box, everything beyond listed as outliers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub outliers: Vec<f64>,
}

impl BoxStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        let s = sorted(values);
        if s.is_empty() {
            return None;
        }
        let q1 = quantile_sorted(&s, 0.25);
        let q3 = quantile_sorted(&s, 0.75);
        let fence = 1.5 * (q3 - q1);
        let (lo, hi) = (q1 - fence, q3 + fence);
        let inside: Vec<f64> = s.iter().copied().filter(|x| *x >= lo && *x <= hi).collect();
        Some(Self {
            min: inside[0],
            q1,
            median: quantile_sorted(&s, 0.5),
            q3,
            max: inside[inside.len() - 1],
            outliers: s.iter().copied().filter(|x| *x < lo || *x > hi).collect(),
        })
    }
}

pub const PLOT_HEADER: &str = "metric,controller,min,q1,median,q3,max,outliers";

/// Quantile table, one row per metric and method. Outliers are
/// space-separated.
pub fn emit_plot_data(trials: &[TrialRecord], mut w: impl Write) -> Result<()> {
    writeln!(w, "{PLOT_HEADER}")?;
    let mut controllers: Vec<ControllerKind> = Vec::new();
    for t in trials {
        if !controllers.contains(&t.controller) {
            controllers.push(t.controller);
        }
    }
    for (name, f) in METRICS {
        for c in &controllers {
            let v: Vec<f64> = trials.iter().filter(|t| t.controller == *c).map(|t| f(&t.metrics)).collect();
            let b = BoxStats::of(&v).expect("controller has trials");
            let out: Vec<String> = b.outliers.iter().map(|x| x.to_string()).collect();
            writeln!(
                w,
                "{name},{},{},{},{},{},{},{}",
                c.as_str(),
                b.min,
                b.q1,
                b.median,
                b.q3,
                b.max,
                out.join(" ")
            )?;
        }
    }
    Ok(())
}

/// Writes `summary.json`, `trials.csv` and `plot_data.csv` into `dir`.
pub fn write_outputs(result: &BatchResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("summary.json"), summary_json(&result.summary)?)?;
    std::fs::write(dir.join("trials.csv"), trials_csv(&result.trials))?;
    let mut plot = Vec::new();
    emit_plot_data(&result.trials, &mut plot)?;
    std::fs::write(dir.join("plot_data.csv"), plot)?;
    Ok(())
}
