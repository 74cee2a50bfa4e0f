//! Wire format of the `/session` endpoint. Every frame is a JSON text
//! message `{"v": 1, "type": ..., "payload": ...}`; see PROTOCOL.md.

use comanip_core::analysis::EnergyLedger;
use comanip_core::simworld::{ControllerKind, Scenario};
use comanip_core::{Pose, Twist, Wrench};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const VERSION: u32 = 1;
/// Upper bound on any frame the server sends.
pub const MAX_FRAME_BYTES: usize = 64 * 1024;
pub const MAX_PARTICLES: usize = 256;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0}")]
    Version(u32),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope<P> {
    v: u32,
    #[serde(rename = "type")]
    kind: String,
    payload: P,
}

fn open(text: &str) -> Result<(String, Value), ProtocolError> {
    let env: Envelope<Value> =
        serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if env.v != VERSION {
        return Err(ProtocolError::Version(env.v));
    }
    Ok((env.kind, env.payload))
}

fn payload<P: DeserializeOwned>(v: Value) -> Result<P, ProtocolError> {
    serde_json::from_value(v).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

fn seal<P: Serialize>(kind: &str, payload: &P) -> String {
    serde_json::to_string(&Envelope {
        v: VERSION,
        kind: kind.to_string(),
        payload,
    })
    .expect("wire types always serialize")
}

// ---- client -> server ----

/// `[fx, fy, fz, τx, τy, τz]` in N and N·m, world frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WrenchCommand {
    pub wrench: [f64; 6],
}

impl WrenchCommand {
    pub fn to_wrench(&self) -> Wrench {
        let w = &self.wrench;
        Wrench::new([w[0], w[1], w[2]].into(), [w[3], w[4], w[5]].into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Start,
    Pause,
    Reset,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlCommand {
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectScenario {
    pub scenario: Scenario,
}

/// Live overrides; absent fields keep their value. Out-of-range values are
/// clamped to [`ParamLimits`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_p: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_o: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_o: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClientMessage {
    Wrench(WrenchCommand),
    Control(ControlCommand),
    SelectScenario(Box<SelectScenario>),
    Params(ParamOverrides),
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        let (kind, p) = open(text)?;
        Ok(match kind.as_str() {
            "wrench" => Self::Wrench(payload(p)?),
            "control" => Self::Control(payload(p)?),
            "select_scenario" => Self::SelectScenario(Box::new(payload(p)?)),
            "params" => Self::Params(payload(p)?),
            _ => return Err(ProtocolError::UnknownType(kind)),
        })
    }

    pub fn to_json(&self) -> String {
        match self {
            Self::Wrench(p) => seal("wrench", p),
            Self::Control(p) => seal("control", p),
            Self::SelectScenario(p) => seal("select_scenario", p),
            Self::Params(p) => seal("params", p),
        }
    }
}

// ---- server -> client ----

/// Closed intervals the server clamps parameter overrides into.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamLimits {
    pub lambda_p: [f64; 2],
    pub lambda_o: [f64; 2],
    pub d_p: [f64; 2],
    pub d_o: [f64; 2],
}

impl Default for ParamLimits {
    fn default() -> Self {
        Self {
            lambda_p: [5.0, 300.0],
            lambda_o: [0.5, 50.0],
            d_p: [0.0, 2.0],
            d_o: [0.0, 2.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub version: u32,
    pub scenario: String,
    pub controller: ControllerKind,
    pub tick_hz: f64,
    pub broadcast_hz: f64,
    pub f_max: f64,
    pub tau_max: f64,
    /// Seconds a wrench is held at full strength, then the fade length.
    pub hold_s: f64,
    pub fade_s: f64,
    pub limits: ParamLimits,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateView {
    pub p_star: [f64; 3],
    /// `[w, x, y, z]`
    pub q_star: [f64; 4],
    pub a_p: [f64; 3],
    pub a_o: [f64; 3],
    pub c_p: f64,
    pub c_o: f64,
}

/// Position attractor of a particle group and the group's total weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleView {
    pub p: [f64; 3],
    pub w: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyView {
    pub lin: EnergyLedger,
    pub rot: EnergyLedger,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveMetrics {
    /// Session time since the last reset, s.
    pub elapsed: f64,
    pub lin_impulse: f64,
    pub ang_impulse: f64,
    pub avg_force: f64,
    pub avg_torque: f64,
    /// First time the goal was reached, if it has been.
    pub completion_time: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsView {
    pub lambda_p: [f64; 3],
    pub lambda_o: [f64; 3],
    pub d_p: f64,
    pub d_o: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFrame {
    pub tick: u64,
    pub t: f64,
    pub running: bool,
    pub finished: bool,
    pub pose: Pose,
    pub twist: Twist,
    pub goal: Pose,
    pub estimate: EstimateView,
    pub particles: Vec<ParticleView>,
    /// Human arm manipulability `J Jᵀ`, row major.
    pub manipulability: [[f64; 3]; 3],
    pub energy: EnergyView,
    pub metrics: LiveMetrics,
    /// Wrench the human applied on the last tick after hold and clamping.
    pub u_h: Wrench,
    pub params: ParamsView,
    pub fault: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorFrame {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ServerMessage {
    Hello(Hello),
    State(Box<StateFrame>),
    Error(ErrorFrame),
}

impl ServerMessage {
    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        let (kind, p) = open(text)?;
        Ok(match kind.as_str() {
            "hello" => Self::Hello(payload(p)?),
            "state" => Self::State(Box::new(payload(p)?)),
            "error" => Self::Error(payload(p)?),
            _ => return Err(ProtocolError::UnknownType(kind)),
        })
    }

    pub fn to_json(&self) -> String {
        match self {
            Self::Hello(p) => seal("hello", p),
            Self::State(p) => seal("state", p),
            Self::Error(p) => seal("error", p),
        }
    }

    pub fn error(code: &str, message: impl Into<String>) -> Self {
        Self::Error(ErrorFrame {
            code: code.to_string(),
            message: message.into(),
        })
    }
}

/// Thins `n` weighted particles to at most `max` by merging runs of
/// consecutive particles. Each run is shown at its heaviest member and
/// carries the run's summed weight, so total weight is preserved.
pub fn decimate(points: &[[f64; 3]], weights: &[f64], max: usize) -> Vec<ParticleView> {
    assert_eq!(points.len(), weights.len());
    if points.is_empty() || max == 0 {
        return Vec::new();
    }
    let stride = points.len().div_ceil(max);
    points
        .chunks(stride)
        .zip(weights.chunks(stride))
        .map(|(p, w)| {
            let best = (0..w.len()).fold(0, |b, i| if w[i] > w[b] { i } else { b });
            ParticleView {
                p: p[best],
                w: w.iter().sum(),
            }
        })
        .collect()
}
