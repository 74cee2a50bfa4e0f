use std::collections::HashSet;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dynamics::{human_wrench, lock_wrench, step, SimState, SimWorld};
use super::log::{EstimatorRecord, TickRecord, Trajectory};
use super::scenario::{ControllerKind, Scenario, Trigger};
use crate::analysis::{compute_metrics, energy_audit, EffortSample, TrialStatus};
use crate::body_models::{ik_witness, manipulability, GoalReachability, HumanArm, IkOptions, SerialChain};
use crate::control::{admittance_baseline, desired_wrench, total_torque, u_ds, ImpedanceGains};
use crate::error::{Error, Result};
use crate::estimator::{AccelEstimator, ConfidenceState, DualFilter, EstimateSnapshot, Observation};
use crate::intent_ds::{check_gas, eval_pos, eval_rot, PosDsParams, RotDsParams};
use crate::types::{Pose, Twist, Wrench};

/// Stream separation for the seeded generators of one episode.
const NOISE_STREAM: u64 = 0x6e6f_6973_65;
const FILTER_STREAM: u64 = 0x6669_6c74;

const HUMAN_TRACK_ITERS: usize = 5;

/// A steppable closed-loop episode. `run_episode` drives it with the
/// scripted human; the session server drives it with client wrenches.
pub struct Episode {
    scenario: Scenario,
    world: SimWorld,
    oracle: GoalReachability,
    filter: Option<DualFilter>,
    state: SimState,
    goal_idx: usize,
    tick: u64,
    noise: Normal<f64>,
    rng: ChaCha8Rng,
    acc_lin: AccelEstimator,
    acc_ang: AccelEstimator,
    estimate: EstimateSnapshot,
    adm_cmd: Twist,
    reached: bool,
    stop_at_goal: bool,
    audit: bool,
    last_u_h: Wrench,
}

/// What one control tick produced.
pub struct TickOutput {
    pub record: TickRecord,
    pub estimator: Option<EstimatorRecord>,
}

fn fixed_estimate(scenario: &Scenario, goal: &Pose, c: f64) -> EstimateSnapshot {
    let f = &scenario.filter;
    EstimateSnapshot {
        step: 0,
        pos: PosDsParams::new(Vector3::repeat(f.a_bounds_pos.mid()), goal.p),
        rot: RotDsParams::new(Vector3::repeat(f.a_bounds_rot.mid()), goal.q),
        conf_p: ConfidenceState::new(f.d_p).with_value(c),
        conf_o: ConfidenceState::new(f.d_o).with_value(c),
    }
}

impl Episode {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let robot = Arc::new(SerialChain::default_robot());
        let world = SimWorld::new(&scenario.sim, robot.clone(), &scenario.start.q)?;
        let tool = world.tool_pose(&scenario.start).to_isometry();
        let theta = ik_witness(&robot, &tool, &IkOptions::default())
            .ok_or_else(|| Error::Config("start pose is not reachable by the robot".into()))?;
        let theta = world.track_shadow(&theta, &scenario.start)?;
        let mut arm = HumanArm::new(SerialChain::default_human());
        arm.track_position(&world.dynamics.object().human_contact(&scenario.start), 100);
        let first = scenario.goals[0];
        let state = SimState {
            x: scenario.start,
            v: Twist::zero(),
            theta_dot: theta.clone() * 0.0,
            theta,
            t: 0.0,
            hidden_pos: first.pos,
            hidden_rot: first.rot,
            human_arm: arm,
        };
        let filter = match scenario.controller {
            ControllerKind::Proposed => {
                let mut cfg = scenario.filter.clone();
                cfg.rng_seed = scenario.seed ^ FILTER_STREAM;
                Some(DualFilter::new(cfg)?)
            }
            _ => None,
        };
        let estimate = match (&filter, scenario.controller) {
            (Some(f), _) => f.snapshot(),
            (None, ControllerKind::FixedGoalDs) => fixed_estimate(&scenario, &first.goal(), 1.0),
            (None, _) => fixed_estimate(&scenario, &scenario.start, 0.0),
        };
        let oracle = GoalReachability::new(robot, world.dynamics.object().tool_in_com());
        let sigma = scenario.sim.velocity_noise;
        Ok(Self {
            noise: Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed ^ NOISE_STREAM),
            acc_lin: AccelEstimator::new(scenario.filter.accel_cutoff_hz),
            acc_ang: AccelEstimator::new(scenario.filter.accel_cutoff_hz),
            oracle,
            world,
            filter,
            state,
            goal_idx: 0,
            tick: 0,
            estimate,
            adm_cmd: Twist::zero(),
            reached: false,
            stop_at_goal: true,
            audit: false,
            last_u_h: Wrench::zero(),
            scenario,
        })
    }

    /// Re-check every goal that survives trimming with an uncached IK search.
    pub fn set_audit(&mut self, on: bool) {
        self.audit = on;
        if let Some(f) = &mut self.filter {
            f.set_audit(on);
        }
    }

    /// With `false` the state keeps integrating after the last goal is
    /// reached, as an interactive session needs.
    pub fn set_stop_at_goal(&mut self, on: bool) {
        self.stop_at_goal = on;
    }

    pub fn set_gains(&mut self, gains: ImpedanceGains) -> Result<()> {
        gains.validate()?;
        self.scenario.gains = gains;
        Ok(())
    }

    pub fn set_ascent_rates(&mut self, d_p: f64, d_o: f64) -> Result<()> {
        if let Some(f) = &mut self.filter {
            f.set_ascent_rates(d_p, d_o)?;
        }
        self.scenario.filter.d_p = d_p;
        self.scenario.filter.d_o = d_o;
        Ok(())
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn world(&self) -> &SimWorld {
        &self.world
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn estimate(&self) -> &EstimateSnapshot {
        &self.estimate
    }

    pub fn filter(&self) -> Option<&DualFilter> {
        self.filter.as_ref()
    }

    pub fn filter_mut(&mut self) -> Option<&mut DualFilter> {
        self.filter.as_mut()
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn dt(&self) -> f64 {
        self.scenario.sim.dt_ctrl
    }

    /// The last goal of the schedule has been reached.
    pub fn finished(&self) -> bool {
        self.reached
    }

    pub fn last_human_wrench(&self) -> Wrench {
        self.last_u_h
    }

    pub fn current_goal(&self) -> Pose {
        self.state.hidden_goal()
    }

    fn goal_reached(&self) -> bool {
        self.scenario
            .completion
            .reached(&self.state.x, &self.state.v, &self.current_goal())
    }

    fn advance_schedule(&mut self) {
        while let Some(next) = self.scenario.goals.get(self.goal_idx + 1) {
            let go = match next.trigger {
                Trigger::At(t) => self.state.t + 1e-9 >= t,
                Trigger::Reached => self.goal_reached(),
            };
            if !go {
                break;
            }
            self.goal_idx += 1;
            self.state.hidden_pos = next.pos;
            self.state.hidden_rot = next.rot;
            if self.scenario.controller == ControllerKind::FixedGoalDs {
                self.estimate = fixed_estimate(&self.scenario, &next.goal(), 1.0);
            }
        }
    }

    fn observe(&mut self, dt_est: f64) -> Observation {
        let n3 = |rng: &mut ChaCha8Rng| {
            Vector3::new(
                self.noise.sample(rng),
                self.noise.sample(rng),
                self.noise.sample(rng),
            )
        };
        let v = self.state.v.lin + n3(&mut self.rng);
        let w = self.state.v.ang + n3(&mut self.rng);
        Observation {
            pose: self.state.x,
            v_lin: v,
            a_lin: self.acc_lin.update(&v, dt_est),
            omega: w,
            alpha: self.acc_ang.update(&w, dt_est),
            human_hand: self.world.dynamics.object().human_contact(&self.state.x),
        }
    }

    fn audit_survivors(&self, goals: &[Pose]) -> (usize, usize) {
        let mut seen = HashSet::new();
        let mut bad = 0;
        let opts = IkOptions::default();
        for g in goals {
            let key: Vec<u64> = g.p.iter().chain(g.q.coords().iter()).map(|x| x.to_bits()).collect();
            if !seen.insert(key) {
                continue;
            }
            if ik_witness(self.oracle.chain(), &self.oracle.tool_target(g), &opts).is_none() {
                bad += 1;
            }
        }
        (seen.len(), bad)
    }

    fn run_estimator(&mut self) -> Result<Option<EstimatorRecord>> {
        if self.filter.is_none() {
            return Ok(None);
        }
        let dt_est = self.dt() * self.scenario.sim.est_every as f64;
        let hand = self.world.dynamics.object().human_contact(&self.state.x);
        self.state.human_arm.track_position(&hand, HUMAN_TRACK_ITERS);
        let e_m: Matrix3<f64> = manipulability(&self.state.human_arm);
        let obs = self.observe(dt_est);
        let filter = self.filter.as_mut().expect("checked above");
        let snap = filter.step(&obs, &e_m, &self.oracle, dt_est)?;
        let stats = filter.last_stats();
        let (survivors, survivors_infeasible) = if self.audit {
            let goals = filter.last_survivors().to_vec();
            let (n, bad) = self.audit_survivors(&goals);
            (Some(n), Some(bad))
        } else {
            (None, None)
        };
        self.estimate = snap;
        Ok(Some(EstimatorRecord {
            tick: self.tick,
            t: self.state.t,
            estimate: snap,
            stats,
            v_obs: obs.v_lin,
            v_est: eval_pos(&snap.pos, &obs.pose.p),
            w_obs: obs.omega,
            w_est: eval_rot(&snap.rot, &obs.pose.q),
            gas_ok: check_gas(&snap.pos) && check_gas(&snap.rot),
            survivors,
            survivors_infeasible,
        }))
    }

    /// Tool wrench the selected controller asks for, before the torque layer.
    fn command(&mut self, u_h: &Wrench) -> Result<Wrench> {
        let x = self.state.x;
        let v = self.state.v;
        let locks = &self.scenario.locks;
        let task = match self.scenario.controller {
            ControllerKind::Proposed | ControllerKind::FixedGoalDs => {
                let e = &self.estimate;
                let v_hat = Twist::new(eval_pos(&e.pos, &x.p), eval_rot(&e.rot, &x.q));
                u_ds(&v, &v_hat, e.conf_p.c, e.conf_o.c, &self.scenario.gains)
            }
            ControllerKind::Admittance => {
                let mask = locks.mask();
                let mut ext = u_h.to_vector();
                for i in 0..6 {
                    if mask[i] {
                        ext[i] = 0.0;
                    }
                }
                let cmd = admittance_baseline(
                    &self.adm_cmd,
                    &Wrench::from_vector(&ext),
                    &self.scenario.admittance,
                    self.dt(),
                );
                let mut c = cmd.to_vector();
                for i in 0..6 {
                    if mask[i] {
                        c[i] = 0.0;
                    }
                }
                self.adm_cmd = Twist::from_vector(&c);
                let k = &self.scenario.tracking;
                let err = self.adm_cmd.to_vector() - v.to_vector();
                let mut w = Wrench::new(err.fixed_rows::<3>(0) * k.k_lin, err.fixed_rows::<3>(3) * k.k_rot)
                    .to_vector();
                for i in 0..6 {
                    if mask[i] {
                        w[i] = 0.0;
                    }
                }
                Wrench::from_vector(&w)
            }
        };
        let u = task + lock_wrench(locks, &x, &v);
        let d = &self.world.dynamics;
        desired_wrench(&u, &d.robot_gravity(), &d.object().gravity(), &d.grasp_t(&x))
    }

    /// One control tick. With `external` set, that wrench (clamped to the
    /// human policy limits) replaces the scripted human.
    pub fn tick(&mut self, external: Option<Wrench>) -> Result<TickOutput> {
        self.advance_schedule();
        let estimator = if self.tick % self.scenario.sim.est_every as u64 == 0 {
            self.run_estimator()?
        } else {
            None
        };
        let u_h = match external {
            Some(w) => self.scenario.human.clamp(&w),
            None => human_wrench(&self.state, &self.scenario.human),
        };
        self.last_u_h = u_h;
        let u_r_d = self.command(&u_h)?;
        let torque = total_torque(
            &self.world.robot,
            &self.state.theta,
            &self.state.theta_dot,
            &u_r_d,
            &self.scenario.joint_limits,
        );
        let (energy, energy_rot) = energy_audit(
            &self.state.x,
            &self.state.v,
            &u_h,
            self.world.dynamics.mass(),
            &self.estimate,
            &self.scenario.gains,
        );
        let e = &self.estimate;
        let record = TickRecord {
            tick: self.tick,
            t: self.state.t,
            x: self.state.x,
            v: self.state.v,
            u_h,
            u_r: torque.applied,
            est_goal: Pose::new(e.pos.attractor, e.rot.attractor),
            est_a_p: e.pos.a,
            est_a_o: e.rot.a,
            c_p: e.conf_p.c,
            c_o: e.conf_o.c,
            c_dot_p: e.conf_p.c_dot,
            c_dot_o: e.conf_o.c_dot,
            grad_p: e.conf_p.grad,
            goal: self.current_goal(),
            energy,
            energy_rot,
            degraded: torque.degraded,
        };
        let at_goal = self.goal_idx + 1 == self.scenario.goals.len() && self.goal_reached();
        self.reached |= at_goal;
        if !(at_goal && self.stop_at_goal) {
            self.state = step(&self.state, &self.world, &torque.applied, &u_h, self.dt())?;
        }
        self.tick += 1;
        Ok(TickOutput { record, estimator })
    }
}

/// Runs the scripted episode until the last goal is reached, the horizon
/// passes, or a fault aborts it.
pub fn run_episode(scenario: &Scenario) -> Result<Trajectory> {
    run_episode_with(scenario, false)
}

/// As [`run_episode`], optionally auditing trimmed particles every filter step.
pub fn run_episode_with(scenario: &Scenario, audit: bool) -> Result<Trajectory> {
    let mut ep = Episode::new(scenario.clone())?;
    ep.set_audit(audit);
    let dt = ep.dt();
    let max_ticks = (scenario.sim.horizon / dt).round() as u64;
    let mut ticks = Vec::with_capacity(max_ticks as usize + 1);
    let mut estimates = Vec::new();
    let mut fault = None;
    while ep.tick_count() <= max_ticks {
        match ep.tick(None) {
            Ok(out) => {
                ticks.push(out.record);
                estimates.extend(out.estimator);
                if ep.finished() {
                    break;
                }
            }
            Err(e) => {
                fault = Some(e.to_string());
                break;
            }
        }
    }
    let samples: Vec<EffortSample> = ticks.iter().map(|r| r.effort()).collect();
    let goal = scenario.goals.last().expect("validated").goal();
    let mut metrics = if ep.finished() {
        compute_metrics(&samples, dt, &goal, &scenario.completion, scenario.sim.horizon)
    } else {
        let mut m = compute_metrics(&samples, dt, &goal, &scenario.completion, scenario.sim.horizon);
        // With a multi-goal schedule an early pass through the last goal does
        // not count; only the finished flag does.
        m.status = TrialStatus::Timeout;
        m.completion_time = scenario.sim.horizon;
        m
    };
    let status = if fault.is_some() {
        metrics.status = TrialStatus::Fault;
        metrics.completion_time = scenario.sim.horizon;
        TrialStatus::Fault
    } else {
        metrics.status
    };
    Ok(Trajectory {
        scenario: scenario.name.clone(),
        controller: scenario.controller,
        seed: scenario.seed,
        dt,
        ticks,
        estimates,
        status,
        fault,
        metrics,
    })
}
