use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::scenario::ControllerKind;
use crate::analysis::{EffortSample, EnergyLedger, TrialMetrics, TrialStatus};
use crate::error::{Error, Result};
use crate::estimator::{EstimateSnapshot, StepStats};
use crate::rotmath::UnitQuaternion;
use crate::types::{Pose, Twist, Wrench};

/// One control tick: the state before the step and the wrenches applied over it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub t: f64,
    pub x: Pose,
    pub v: Twist,
    pub u_h: Wrench,
    /// Robot tool wrench actually applied.
    pub u_r: Wrench,
    pub est_goal: Pose,
    pub est_a_p: Vector3<f64>,
    pub est_a_o: Vector3<f64>,
    pub c_p: f64,
    pub c_o: f64,
    pub c_dot_p: f64,
    pub c_dot_o: f64,
    pub grad_p: Vector3<f64>,
    /// Active hidden goal.
    pub goal: Pose,
    pub energy: EnergyLedger,
    pub energy_rot: EnergyLedger,
    /// The robot Jacobian was near singular this tick.
    pub degraded: bool,
}

const V3: [&str; 3] = ["x", "y", "z"];
const Q4: [&str; 4] = ["s", "x", "y", "z"];
const LEDGER: [&str; 5] = ["w", "w_dot", "e_d", "e_p", "margin"];

fn push_prefixed(h: &mut Vec<String>, prefix: &str, comps: &[&str]) {
    h.extend(comps.iter().map(|c| format!("{prefix}{c}")));
}

fn header() -> Vec<String> {
    let mut h = vec!["tick".to_string(), "t".to_string()];
    push_prefixed(&mut h, "p_", &V3);
    push_prefixed(&mut h, "q_", &Q4);
    for p in ["v_", "w_", "fh_", "th_", "fr_", "tr_", "est_p_"] {
        push_prefixed(&mut h, p, &V3);
    }
    push_prefixed(&mut h, "est_q_", &Q4);
    push_prefixed(&mut h, "est_ap_", &V3);
    push_prefixed(&mut h, "est_ao_", &V3);
    push_prefixed(&mut h, "", &["c_p", "c_o", "c_dot_p", "c_dot_o"]);
    push_prefixed(&mut h, "grad_p_", &V3);
    push_prefixed(&mut h, "goal_p_", &V3);
    push_prefixed(&mut h, "goal_q_", &Q4);
    push_prefixed(&mut h, "", &LEDGER);
    h.extend(LEDGER.iter().map(|c| format!("{c}_rot")));
    h.push("degraded".into());
    h
}

struct Cursor<I: Iterator<Item = f64>>(I);

impl<I: Iterator<Item = f64>> Cursor<I> {
    fn f(&mut self) -> f64 {
        self.0.next().unwrap_or(f64::NAN)
    }
    fn v3(&mut self) -> Vector3<f64> {
        Vector3::new(self.f(), self.f(), self.f())
    }
    fn q(&mut self) -> Result<UnitQuaternion> {
        let s = self.f();
        UnitQuaternion::new(s, self.v3())
    }
    fn ledger(&mut self) -> EnergyLedger {
        EnergyLedger {
            w: self.f(),
            w_dot: self.f(),
            e_d: self.f(),
            e_p: self.f(),
            passivity_margin: self.f(),
        }
    }
}

fn ledger_fields(l: &EnergyLedger) -> [f64; 5] {
    [l.w, l.w_dot, l.e_d, l.e_p, l.passivity_margin]
}

impl TickRecord {
    pub fn csv_header() -> String {
        header().join(",")
    }

    fn values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(80);
        v.extend(self.x.p.iter());
        v.extend(self.x.q.coords().iter());
        for w in [self.v.lin, self.v.ang, self.u_h.force, self.u_h.torque, self.u_r.force, self.u_r.torque] {
            v.extend(w.iter());
        }
        v.extend(self.est_goal.p.iter());
        v.extend(self.est_goal.q.coords().iter());
        v.extend(self.est_a_p.iter());
        v.extend(self.est_a_o.iter());
        v.extend([self.c_p, self.c_o, self.c_dot_p, self.c_dot_o]);
        v.extend(self.grad_p.iter());
        v.extend(self.goal.p.iter());
        v.extend(self.goal.q.coords().iter());
        v.extend(ledger_fields(&self.energy));
        v.extend(ledger_fields(&self.energy_rot));
        v
    }

    /// Floats use the shortest representation that parses back exactly.
    pub fn csv_row(&self) -> String {
        let mut s = format!("{},{}", self.tick, self.t);
        for x in self.values() {
            let _ = write!(s, ",{x}");
        }
        let _ = write!(s, ",{}", self.degraded as u8);
        s
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        let n = header().len();
        if f.len() != n {
            return Err(Error::Config(format!("log row has {} fields, expected {n}", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number `{s}` in log")))
        };
        let tick = f[0]
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("bad tick `{}` in log", f[0])))?;
        let vals: Vec<f64> = f[1..n - 1].iter().map(|s| num(s)).collect::<Result<_>>()?;
        let mut c = Cursor(vals.into_iter());
        let t = c.f();
        let p = c.v3();
        let q = c.q()?;
        let (vl, va, fh, th, fr, tr) = (c.v3(), c.v3(), c.v3(), c.v3(), c.v3(), c.v3());
        let est_p = c.v3();
        let est_q = c.q()?;
        let (est_a_p, est_a_o) = (c.v3(), c.v3());
        let (c_p, c_o, c_dot_p, c_dot_o) = (c.f(), c.f(), c.f(), c.f());
        let grad_p = c.v3();
        let goal_p = c.v3();
        let goal_q = c.q()?;
        let (energy, energy_rot) = (c.ledger(), c.ledger());
        Ok(Self {
            tick,
            t,
            x: Pose::new(p, q),
            v: Twist::new(vl, va),
            u_h: Wrench::new(fh, th),
            u_r: Wrench::new(fr, tr),
            est_goal: Pose::new(est_p, est_q),
            est_a_p,
            est_a_o,
            c_p,
            c_o,
            c_dot_p,
            c_dot_o,
            grad_p,
            goal: Pose::new(goal_p, goal_q),
            energy,
            energy_rot,
            degraded: f[n - 1] == "1",
        })
    }

    pub fn effort(&self) -> EffortSample {
        EffortSample {
            t: self.t,
            x: self.x,
            v: self.v,
            u_h: self.u_h,
        }
    }
}

/// One estimator update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRecord {
    pub tick: u64,
    pub t: f64,
    pub estimate: EstimateSnapshot,
    pub stats: StepStats,
    /// Observed velocities fed to the filter and the estimate's prediction.
    pub v_obs: Vector3<f64>,
    pub v_est: Vector3<f64>,
    pub w_obs: Vector3<f64>,
    pub w_est: Vector3<f64>,
    /// The published estimate is a stable DS.
    pub gas_ok: bool,
    /// Distinct goals surviving trimming, when audited.
    pub survivors: Option<usize>,
    /// Of those, how many an uncached IK search rejects.
    pub survivors_infeasible: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scenario: String,
    pub controller: ControllerKind,
    pub seed: u64,
    pub dt: f64,
    pub ticks: Vec<TickRecord>,
    pub estimates: Vec<EstimatorRecord>,
    pub status: TrialStatus,
    pub fault: Option<String>,
    pub metrics: TrialMetrics,
}

pub fn write_csv(ticks: &[TickRecord], mut w: impl Write) -> Result<()> {
    writeln!(w, "{}", TickRecord::csv_header())?;
    for r in ticks {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn read_csv(r: impl BufRead) -> Result<Vec<TickRecord>> {
    let mut lines = r.lines();
    let head = lines.next().transpose()?.unwrap_or_default();
    if head.trim_end() != TickRecord::csv_header() {
        return Err(Error::Config("log does not start with the expected header".into()));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(TickRecord::from_csv_row(&line)?);
        }
    }
    Ok(out)
}
