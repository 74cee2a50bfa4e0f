//! Robot and human kinematic chains, the carried object, manipulability and
//! the IK-based goal feasibility check.

mod chain;
mod human;
mod ik;
mod object;

pub use chain::{ChainFrames, ChainSpec, FrameSpec, Joint, JointKind, JointSpec, SerialChain};
pub use human::{local_ellipsoid, manipulability, manipulability_at, HumanArm, MANIPULABILITY_EPS};
pub use ik::{
    dls_step, ik_feasible, ik_solve, ik_witness, outside_reach, pose_error, verify_witness,
    AlwaysFeasible, FeasibilityOracle, GoalReachability, IkOptions,
};
pub use object::{contact_to_com, contact_twist, RigidObject, GRAVITY};
