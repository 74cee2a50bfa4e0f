//! Closed-loop simulation of the robot and carried object with a scripted
//! human, a kinematic shadow arm, and scenario files.

mod dynamics;
mod episode;
mod log;
mod scenario;

pub use dynamics::{hidden_velocity, human_wrench, lock_wrench, step, CombinedDynamics, SimState, SimWorld};
pub use episode::{run_episode, run_episode_with, Episode, TickOutput};
pub use log::{read_csv, write_csv, EstimatorRecord, TickRecord, Trajectory};
pub use scenario::{
    ControllerKind, GoalSegment, HumanPolicy, Locks, Scenario, SimParams, TrackingGains, Trigger,
};
