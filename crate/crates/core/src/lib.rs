//! Flexible bevel-tip needle insertion: a quasi-static finite-element
//! simulator coupled with cross-entropy planning, a receding-horizon
//! tracker, a kinematic bevel controller and a simulated EM tip sensor.

pub mod bang_bang;
pub mod ce;
pub mod em;
pub mod error;
pub mod harness;
pub mod io;
pub mod planner;
pub mod scenario;
pub mod seed;
pub mod tracker;
pub mod sim;

pub use error::{ConfigError, EmError, SimError};
pub use sim::{
    contact_force, tip_pose, Bevel, ContactPoint, ControlInput, Flip, NeedleState, Pose2,
    SimConfig, SimState, Simulator, TissueLayer,
};
