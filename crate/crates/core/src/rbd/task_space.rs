use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::dynamics::mass_cholesky;
use super::model::RobotModel;
use crate::error::{Error, Result};

/// Task-space quantities for one task Jacobian at one configuration.
#[derive(Debug, Clone)]
pub struct TaskDynamicsBundle {
    pub jacobian: DMatrix<f64>,
    /// Regularized task-space inertia `(J M⁻¹ Jᵀ + εI)⁻¹`.
    pub lambda: DMatrix<f64>,
    /// Dynamically consistent pseudoinverse `M⁻¹ Jᵀ Λ`.
    pub jbar: DMatrix<f64>,
    /// Torque null-space projector `I − Jᵀ J̄ᵀ`.
    pub null_projector: DMatrix<f64>,
}

impl TaskDynamicsBundle {
    /// Acceleration-space projector `I − J̄ J` (the transpose of the torque projector).
    pub fn acceleration_projector(&self) -> DMatrix<f64> {
        self.null_projector.transpose()
    }
}

/// `J M⁻¹ Jᵀ + εI` inverted through a Cholesky solve.
pub fn task_dynamics_with(
    m_chol: &Cholesky<f64, Dyn>,
    jacobian: &DMatrix<f64>,
    epsilon: f64,
) -> Result<TaskDynamicsBundle> {
    let n = m_chol.l_dirty().nrows();
    if jacobian.ncols() != n {
        return Err(Error::Dimension {
            what: "task Jacobian columns",
            expected: n,
            got: jacobian.ncols(),
        });
    }
    if jacobian.iter().any(|v| !v.is_finite()) || !epsilon.is_finite() {
        return Err(Error::NonFinite("task Jacobian"));
    }
    let m = jacobian.nrows();
    let minv_jt = m_chol.solve(&jacobian.transpose());
    let mut inv_lambda = jacobian * &minv_jt;
    inv_lambda = (&inv_lambda + inv_lambda.transpose()) * 0.5;
    for i in 0..m {
        inv_lambda[(i, i)] += epsilon.max(0.0);
    }
    let chol = Cholesky::new(inv_lambda).ok_or(Error::SingularTask)?;
    let lambda = chol.solve(&DMatrix::identity(m, m));
    let lambda = (&lambda + lambda.transpose()) * 0.5;
    let jbar = &minv_jt * &lambda;
    let null_projector = DMatrix::identity(n, n) - jacobian.transpose() * jbar.transpose();
    Ok(TaskDynamicsBundle {
        jacobian: jacobian.clone(),
        lambda,
        jbar,
        null_projector,
    })
}

impl RobotModel {
    pub fn task_dynamics(&self, q: &DVector<f64>, jacobian: &DMatrix<f64>, epsilon: f64) -> Result<TaskDynamicsBundle> {
        if epsilon < 0.0 {
            return Err(Error::InvalidProblem("epsilon must be >= 0".into()));
        }
        let chol = mass_cholesky(&self.mass_matrix(q)?)?;
        task_dynamics_with(&chol, jacobian, epsilon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbd::kinematics::test_models::planar;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn iiwa_q(qs: Vec<f64>) -> (RobotModel, DVector<f64>) {
        (RobotModel::bundled_iiwa(), DVector::from_vec(qs))
    }

    #[test]
    fn square_full_rank_is_exact_inverse() {
        let m = planar(2, Vector3::zeros());
        let q = DVector::from_vec(vec![0.3, 0.9]);
        let j = m.jacobian(&q, 2, &Vector3::zeros()).unwrap().rows(0, 2).clone_owned();
        let b = m.task_dynamics(&q, &j, 0.0).unwrap();
        let jinv = j.clone().try_inverse().unwrap();
        assert!((&b.jbar - jinv).amax() < 1e-10);
        assert!(b.null_projector.amax() < 1e-10);
    }

    #[test]
    fn rank_deficient_bounded_by_damping() {
        let (m, q) = iiwa_q(vec![0.1, 0.5, -0.2, -1.2, 0.3, 0.8, 0.0]);
        let j6 = m.jacobian(&q, 7, &Vector3::zeros()).unwrap();
        let mut j = DMatrix::zeros(2, 7);
        j.row_mut(0).copy_from(&j6.row(2));
        j.row_mut(1).copy_from(&j6.row(2));
        assert!(matches!(m.task_dynamics(&q, &j, 0.0), Err(Error::SingularTask)));
        let eps = 1e-6;
        let b = m.task_dynamics(&q, &j, eps).unwrap();
        assert!(b.lambda.iter().all(|v| v.is_finite() && v.abs() <= 1.0 / eps));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn projector_properties(qs in prop::collection::vec(-2.0f64..2.0, 7),
                                taus in prop::collection::vec(-10.0f64..10.0, 7)) {
            let (m, q) = iiwa_q(qs);
            let j = m.jacobian(&q, 7, &Vector3::zeros()).unwrap().rows(0, 3).clone_owned();
            let b = m.task_dynamics(&q, &j, 0.0).unwrap();
            // Skip near-singular draws where J J̄ = I is ill-conditioned.
            let svd = j.clone().svd(false, false);
            prop_assume!(svd.singular_values.min() > 0.05);
            prop_assert!((&j * &b.jbar - DMatrix::identity(3, 3)).amax() < 1e-8);
            let n = &b.null_projector;
            prop_assert!((n * n - n).amax() < 1e-8);
            let tau = DVector::from_vec(taus);
            let mm = m.mass_matrix(&q).unwrap();
            let chol = mass_cholesky(&mm).unwrap();
            let task_acc = &j * chol.solve(&(n * &tau));
            prop_assert!(task_acc.norm() < 1e-8 * tau.norm().max(1.0));
        }
    }
}
