//! One interactive episode driven by client wrenches. Purely synchronous;
//! the service runs it on its own thread.

use comanip_core::body_models::manipulability;
use comanip_core::control::ImpedanceGains;
use comanip_core::simworld::{Episode, Scenario, TickRecord};
use comanip_core::{PosDsParams, Pose, Result, RotDsParams, UnitQuaternion, Wrench};
use nalgebra::Vector3;

use crate::protocol::{
    decimate, Action, ClientMessage, EnergyView, EstimateView, Hello, LiveMetrics, ParamLimits,
    ParamOverrides, ParamsView, ServerMessage, StateFrame, MAX_FRAME_BYTES, MAX_PARTICLES, VERSION,
};

/// A client wrench is applied in full for this long after it arrives...
pub const HOLD_S: f64 = 0.1;
/// ...then ramps linearly to zero over this long.
pub const FADE_S: f64 = 0.05;

/// Slack for session times built by repeated addition of the tick length.
const TIME_EPS: f64 = 1e-9;

/// Wrench applied `age` seconds after the last client input.
pub fn held_wrench(w: &Wrench, age: f64) -> Wrench {
    let s = if age <= HOLD_S + TIME_EPS {
        1.0
    } else if age >= HOLD_S + FADE_S - TIME_EPS {
        0.0
    } else {
        1.0 - (age - HOLD_S) / FADE_S
    };
    Wrench::new(w.force * s, w.torque * s)
}

/// Scales force and torque down to the given norms. Non-finite input maps
/// to zero.
pub fn clamp_norm(w: &Wrench, f_max: f64, tau_max: f64) -> Wrench {
    fn cap(v: Vector3<f64>, max: f64) -> Vector3<f64> {
        let n = v.norm();
        if !n.is_finite() {
            Vector3::zeros()
        } else if n > max {
            v * (max / n)
        } else {
            v
        }
    }
    Wrench::new(cap(w.force, f_max), cap(w.torque, tau_max))
}

/// Reaching task used when the server starts without a scenario file.
pub fn default_scenario() -> Scenario {
    let pos = PosDsParams::new(Vector3::repeat(-0.5), Vector3::new(0.9, 0.15, 0.3));
    let rot = RotDsParams::new(Vector3::repeat(-0.75), UnitQuaternion::from_rpy(0.3, 0.0, 0.0));
    let mut s = Scenario::reaching(Scenario::default_start(), pos, rot);
    s.name = "interactive".into();
    s
}

#[derive(Default)]
struct Effort {
    lin: f64,
    ang: f64,
    elapsed: f64,
    completion: Option<f64>,
}

pub struct Session {
    scenario: Scenario,
    limits: ParamLimits,
    episode: Episode,
    running: bool,
    /// Clamped client wrench and the session time it arrived.
    input: Option<(Wrench, f64)>,
    last: Option<TickRecord>,
    effort: Effort,
    fault: Option<String>,
    /// Ticks run since the session was created; survives resets.
    steps: u64,
}

impl Session {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let episode = Self::episode(&scenario)?;
        Ok(Self {
            scenario,
            limits: ParamLimits::default(),
            episode,
            running: true,
            input: None,
            last: None,
            effort: Effort::default(),
            fault: None,
            steps: 0,
        })
    }

    fn episode(scenario: &Scenario) -> Result<Episode> {
        let mut ep = Episode::new(scenario.clone())?;
        ep.set_stop_at_goal(false);
        Ok(ep)
    }

    fn reset(&mut self) {
        self.episode = Self::episode(&self.scenario).expect("scenario was accepted before");
        self.input = None;
        self.last = None;
        self.effort = Effort::default();
        self.fault = None;
    }

    pub fn running(&self) -> bool {
        self.running
    }

    pub fn fault(&self) -> Option<&str> {
        self.fault.as_deref()
    }

    /// Monotone across resets and scenario changes.
    pub fn tick_count(&self) -> u64 {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.episode.state().t
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn hello(&self, tick_hz: f64, broadcast_hz: f64) -> Hello {
        Hello {
            version: VERSION,
            scenario: self.scenario.name.clone(),
            controller: self.scenario.controller,
            tick_hz,
            broadcast_hz,
            f_max: self.scenario.human.f_max,
            tau_max: self.scenario.human.tau_max,
            hold_s: HOLD_S,
            fade_s: FADE_S,
            limits: self.limits,
        }
    }

    /// Applies one client message. Returns an error frame when the message
    /// was well formed but could not be honoured.
    pub fn apply(&mut self, msg: ClientMessage) -> Option<ServerMessage> {
        match msg {
            ClientMessage::Wrench(w) => {
                let h = &self.scenario.human;
                let w = clamp_norm(&w.to_wrench(), h.f_max, h.tau_max);
                self.input = Some((w, self.time()));
                None
            }
            ClientMessage::Control(c) => match c.action {
                Action::Start if self.fault.is_some() => Some(ServerMessage::error(
                    "faulted",
                    "the episode faulted; reset before starting",
                )),
                Action::Start => {
                    self.running = true;
                    None
                }
                Action::Pause => {
                    self.running = false;
                    None
                }
                Action::Reset => {
                    self.reset();
                    None
                }
            },
            ClientMessage::SelectScenario(s) => match Self::episode(&s.scenario) {
                Ok(_) => {
                    self.scenario = s.scenario;
                    self.reset();
                    None
                }
                Err(e) => Some(ServerMessage::error("invalid_scenario", e.to_string())),
            },
            ClientMessage::Params(p) => {
                self.set_params(&p);
                None
            }
        }
    }

    fn set_params(&mut self, p: &ParamOverrides) {
        let lim = &self.limits;
        let clamp3 = |v: [f64; 3], r: [f64; 2]| Vector3::from(v).map(|x| clamp(x, r));
        let mut gains: ImpedanceGains = self.scenario.gains;
        if let Some(v) = p.lambda_p {
            gains.lambda_p = clamp3(v, lim.lambda_p);
        }
        if let Some(v) = p.lambda_o {
            gains.lambda_o = clamp3(v, lim.lambda_o);
        }
        let f = &self.scenario.filter;
        let d_p = p.d_p.map_or(f.d_p, |d| clamp(d, lim.d_p));
        let d_o = p.d_o.map_or(f.d_o, |d| clamp(d, lim.d_o));
        // Clamped values are inside ranges both setters accept.
        self.episode.set_gains(gains).expect("clamped gains are positive");
        self.episode.set_ascent_rates(d_p, d_o).expect("clamped rates are valid");
        self.scenario.gains = gains;
        self.scenario.filter.d_p = d_p;
        self.scenario.filter.d_o = d_o;
    }

    /// Advances one control tick when running.
    pub fn step(&mut self) {
        if !self.running {
            return;
        }
        let t = self.time();
        let u_h = self
            .input
            .map_or(Wrench::zero(), |(w, t0)| held_wrench(&w, t - t0));
        match self.episode.tick(Some(u_h)) {
            Ok(out) => {
                let dt = self.episode.dt();
                let r = out.record;
                self.effort.lin += r.u_h.force.norm() * dt;
                self.effort.ang += r.u_h.torque.norm() * dt;
                self.effort.elapsed += dt;
                if self.effort.completion.is_none() && self.episode.finished() {
                    self.effort.completion = Some(r.t);
                }
                self.last = Some(r);
                self.steps += 1;
            }
            Err(e) => {
                log::warn!("session fault at t = {t:.3}: {e}");
                self.fault = Some(e.to_string());
                self.running = false;
            }
        }
    }

    pub fn frame(&self) -> StateFrame {
        let ep = &self.episode;
        let s = ep.state();
        let e = ep.estimate();
        let particles = match ep.filter() {
            Some(f) => {
                let pts: Vec<[f64; 3]> = f.pos_particles().iter().map(|p| p.attractor.into()).collect();
                decimate(&pts, &f.pos_weights(), MAX_PARTICLES)
            }
            None => Vec::new(),
        };
        let m = manipulability(&s.human_arm);
        let g = &self.scenario.gains;
        let eff = &self.effort;
        let per_s = |x: f64| if eff.elapsed > 0.0 { x / eff.elapsed } else { 0.0 };
        StateFrame {
            tick: self.steps,
            t: s.t,
            running: self.running,
            finished: ep.finished(),
            pose: s.x,
            twist: s.v,
            goal: ep.current_goal(),
            estimate: EstimateView {
                p_star: e.pos.attractor.into(),
                q_star: e.rot.attractor.into(),
                a_p: e.pos.a.into(),
                a_o: e.rot.a.into(),
                c_p: e.conf_p.c,
                c_o: e.conf_o.c,
            },
            particles,
            manipulability: [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]]),
            energy: self
                .last
                .as_ref()
                .map_or(EnergyView::default(), |r| EnergyView {
                    lin: r.energy,
                    rot: r.energy_rot,
                }),
            metrics: LiveMetrics {
                elapsed: eff.elapsed,
                lin_impulse: eff.lin,
                ang_impulse: eff.ang,
                avg_force: per_s(eff.lin),
                avg_torque: per_s(eff.ang),
                completion_time: eff.completion,
            },
            u_h: self.last.as_ref().map_or(Wrench::zero(), |r| r.u_h),
            params: ParamsView {
                lambda_p: g.lambda_p.into(),
                lambda_o: g.lambda_o.into(),
                d_p: self.scenario.filter.d_p,
                d_o: self.scenario.filter.d_o,
            },
            fault: self.fault.clone(),
        }
    }

    /// The current frame as wire text, thinned until it fits in a frame.
    pub fn encode_frame(&self) -> String {
        let mut f = self.frame();
        loop {
            let text = ServerMessage::State(Box::new(f.clone())).to_json();
            if text.len() <= MAX_FRAME_BYTES || f.particles.is_empty() {
                return text;
            }
            let keep = f.particles.len() / 2;
            let pts: Vec<[f64; 3]> = f.particles.iter().map(|p| p.p).collect();
            let w: Vec<f64> = f.particles.iter().map(|p| p.w).collect();
            f.particles = decimate(&pts, &w, keep);
        }
    }

    pub fn start_pose(&self) -> Pose {
        self.scenario.start
    }
}

fn clamp(x: f64, r: [f64; 2]) -> f64 {
    if x.is_nan() {
        r[0]
    } else {
        x.clamp(r[0], r[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{ControlCommand, WrenchCommand};

    fn push(fx: f64) -> ClientMessage {
        ClientMessage::Wrench(WrenchCommand {
            wrench: [fx, 0.0, 0.0, 0.0, 0.0, 0.0],
        })
    }

    #[test]
    fn hold_then_fade() {
        let w = Wrench::new(Vector3::new(10.0, -4.0, 0.0), Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(held_wrench(&w, 0.0), w);
        assert_eq!(held_wrench(&w, HOLD_S), w);
        let mid = held_wrench(&w, HOLD_S + 0.5 * FADE_S);
        assert!((mid.force.x - 5.0).abs() < 1e-12);
        assert!((mid.torque.z - 0.5).abs() < 1e-12);
        assert_eq!(held_wrench(&w, HOLD_S + FADE_S), Wrench::zero());
        assert_eq!(held_wrench(&w, 10.0), Wrench::zero());
        let mut prev = f64::INFINITY;
        for k in 0..200 {
            let f = held_wrench(&w, k as f64 * 1e-3).force.norm();
            assert!(f <= prev);
            prev = f;
        }
    }

    #[test]
    fn norm_clamp() {
        let w = Wrench::new(Vector3::new(300.0, 400.0, 0.0), Vector3::new(0.0, 0.0, -9.0));
        let c = clamp_norm(&w, 30.0, 3.0);
        assert!((c.force.norm() - 30.0).abs() < 1e-12);
        assert!((c.force.x / c.force.y - 0.75).abs() < 1e-12);
        assert_eq!(c.torque, Vector3::new(0.0, 0.0, -3.0));
        let small = Wrench::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros());
        assert_eq!(clamp_norm(&small, 30.0, 3.0), small);
        let nan = Wrench::new(Vector3::new(f64::NAN, 0.0, 0.0), Vector3::zeros());
        assert_eq!(clamp_norm(&nan, 30.0, 3.0), Wrench::zero());
    }

    #[test]
    fn stale_input_decays_to_zero() {
        let mut s = Session::new(default_scenario()).unwrap();
        s.apply(push(12.0));
        let dt = s.scenario().sim.dt_ctrl;
        let mut applied = Vec::new();
        for _ in 0..60 {
            s.step();
            applied.push(s.frame().u_h.force.x);
        }
        let hold = (HOLD_S / dt).round() as usize;
        let gone = ((HOLD_S + FADE_S) / dt).round() as usize;
        assert!(applied[..=hold].iter().all(|f| *f == 12.0));
        assert!(applied[hold + 1] < 12.0 && applied[hold + 1] > 0.0);
        assert!(applied[gone..].iter().all(|f| *f == 0.0));
    }

    #[test]
    fn applied_force_never_exceeds_limit() {
        let mut s = Session::new(default_scenario()).unwrap();
        let f_max = s.scenario().human.f_max;
        s.apply(ClientMessage::Wrench(WrenchCommand {
            wrench: [1e6, -1e6, 1e6, 50.0, 0.0, 0.0],
        }));
        for _ in 0..5 {
            s.step();
            let u = s.frame().u_h;
            assert!(u.force.norm() <= f_max + 1e-9);
            assert!(u.torque.norm() <= s.scenario().human.tau_max + 1e-9);
        }
    }

    #[test]
    fn params_are_clamped_into_limits() {
        let mut s = Session::new(default_scenario()).unwrap();
        s.apply(ClientMessage::Params(ParamOverrides {
            lambda_p: Some([1e9, 40.0, -3.0]),
            d_o: Some(f64::NAN),
            ..Default::default()
        }));
        let p = s.frame().params;
        let lim = ParamLimits::default();
        assert_eq!(p.lambda_p, [lim.lambda_p[1], 40.0, lim.lambda_p[0]]);
        assert_eq!(p.d_o, lim.d_o[0]);
        assert_eq!(p.d_p, default_scenario().filter.d_p);
        // Overrides survive a reset.
        s.apply(ClientMessage::Control(ControlCommand { action: Action::Reset }));
        assert_eq!(s.frame().params.lambda_p[1], 40.0);
    }

    #[test]
    fn pause_start_reset() {
        let mut s = Session::new(default_scenario()).unwrap();
        s.step();
        s.apply(ClientMessage::Control(ControlCommand { action: Action::Pause }));
        s.step();
        assert_eq!(s.tick_count(), 1);
        assert!(!s.frame().running);
        s.apply(ClientMessage::Control(ControlCommand { action: Action::Start }));
        s.step();
        assert_eq!(s.tick_count(), 2);
        s.apply(ClientMessage::Control(ControlCommand { action: Action::Reset }));
        let f = s.frame();
        assert_eq!((f.tick, f.t), (2, 0.0));
        assert_eq!(f.pose, s.start_pose());
    }

    #[test]
    fn invalid_scenario_is_refused() {
        let mut s = Session::new(default_scenario()).unwrap();
        let mut bad = default_scenario();
        bad.start.p = Vector3::new(5.0, 0.0, 0.3);
        let reply = s.apply(ClientMessage::SelectScenario(Box::new(
            crate::protocol::SelectScenario { scenario: bad },
        )));
        assert!(matches!(reply, Some(ServerMessage::Error(ref e)) if e.code == "invalid_scenario"));
        assert_eq!(s.scenario().name, "interactive");
    }

    #[test]
    fn idle_session_holds_position() {
        // Zero velocity is best explained by an attractor at the current
        // pose, so confidence climbs while the object barely drifts.
        let mut s = Session::new(default_scenario()).unwrap();
        let mut c_prev = 0.0;
        for _ in 0..400 {
            s.step();
            let c = s.frame().estimate.c_p;
            assert!((0.0..=1.0).contains(&c) && c >= c_prev);
            c_prev = c;
        }
        let f = s.frame();
        assert!((f.pose.p - s.start_pose().p).norm() < 1e-2, "{:?}", f.pose.p);
        assert!(f.u_h == Wrench::zero());
        assert!(f.particles.len() <= MAX_PARTICLES && !f.particles.is_empty());
        assert!(s.encode_frame().len() <= MAX_FRAME_BYTES);
    }
}
