//! Constraint-aware intent estimation and confidence-based variable impedance
//! control for a robot and a human carrying one rigid object together.

pub mod analysis;
pub mod body_models;
pub mod control;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod intent_ds;
pub mod rotmath;
pub mod simworld;
pub mod types;

pub use error::{Error, Result};
pub use intent_ds::{PosDsParams, RotDsParams};
pub use rotmath::{RotVec, UnitQuaternion};
pub use types::{Pose, Twist, Wrench};
