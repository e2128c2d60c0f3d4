//! Torque-level redundancy resolution for serial manipulators.
//!
//! Four controllers map a robot state, a prioritized task list, joint limits
//! and measured external joint torques to a commanded torque:
//!
//! * `osc`: operational space control through the dynamically consistent
//!   pseudoinverse, with null-space joint saturation and naive torque clamping;
//! * `qp-mt` / `qp-md`: acceleration-error QPs regularized by the torque norm
//!   or by a joint damping task;
//! * `dcts`: a QP that minimizes acceleration energy with task-scaling
//!   factors, torque and shaped joint bounds, and augmented null-space
//!   projectors for multiple priority levels.
//!
//! The [`sim`] module closes the loop with a forward-dynamics plant and the
//! bundled scenario catalog.

pub mod cli;
pub mod error;
pub mod limits;
pub mod qp;
pub mod rbd;
pub mod sim;
pub mod solvers;
pub mod tasks;

pub use error::{Error, Result};
