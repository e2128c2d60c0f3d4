//! Kinematics and dynamics of fixed-base serial chains.

mod dynamics;
mod kinematics;
mod model;
mod task_space;

pub use dynamics::mass_cholesky;
pub use kinematics::{axis_rotation, rotation_log, ChainPlacement, FramePose};
pub use model::{
    rpy_matrix, Joint, JointEntry, JointLimits, Link, ModelFile, RobotModel, ToolEntry, ToolFrame,
    BUNDLED_IIWA,
};
pub use task_space::{task_dynamics_with, TaskDynamicsBundle};

#[cfg(test)]
pub(crate) use kinematics::test_models;
pub(crate) use kinematics::check_dim;

use nalgebra::DVector;

/// Joint positions and velocities of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, qd: DVector<f64>) -> Self {
        Self { q, qd }
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self { q, qd: DVector::zeros(n) }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite())
    }
}
