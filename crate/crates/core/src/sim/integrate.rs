use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rbd::{mass_cholesky, JointState, RobotModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// `q̇ += q̈ dt; q += q̇ dt`.
    #[default]
    SemiImplicitEuler,
    /// Classic fourth-order Runge-Kutta with the torques held constant over the step.
    Rk4,
}

/// `q̈ = M⁻¹(τ + τ_ext − ν − g)`.
pub fn forward_dynamics(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>, tau: &DVector<f64>) -> Result<DVector<f64>> {
    let mass = model.mass_matrix(q)?;
    let chol = mass_cholesky(&mass)?;
    let h = model.inverse_dynamics(q, qd, &DVector::zeros(q.len()))?;
    Ok(chol.solve(&(tau - h)))
}

/// Advance the plant by `dt` with constant `tau + tau_ext`.
pub fn step(
    model: &RobotModel,
    state: &JointState,
    tau: &DVector<f64>,
    tau_ext: &DVector<f64>,
    dt: f64,
    integrator: Integrator,
) -> Result<JointState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidProblem(format!("integration step must be positive, got {dt}")));
    }
    let total = tau + tau_ext;
    let next = match integrator {
        Integrator::SemiImplicitEuler => {
            let qdd = forward_dynamics(model, &state.q, &state.qd, &total)?;
            let qd = &state.qd + qdd * dt;
            let q = &state.q + &qd * dt;
            JointState::new(q, qd)
        }
        Integrator::Rk4 => {
            let f = |q: &DVector<f64>, qd: &DVector<f64>| forward_dynamics(model, q, qd, &total);
            let (q0, v0) = (&state.q, &state.qd);
            let a1 = f(q0, v0)?;
            let (q2, v2) = (q0 + v0 * (dt / 2.0), v0 + &a1 * (dt / 2.0));
            let a2 = f(&q2, &v2)?;
            let (q3, v3) = (q0 + &v2 * (dt / 2.0), v0 + &a2 * (dt / 2.0));
            let a3 = f(&q3, &v3)?;
            let (q4, v4) = (q0 + &v3 * dt, v0 + &a3 * dt);
            let a4 = f(&q4, &v4)?;
            let q = q0 + (v0 + &v2 * 2.0 + &v3 * 2.0 + &v4) * (dt / 6.0);
            let qd = v0 + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (dt / 6.0);
            JointState::new(q, qd)
        }
    };
    if !next.is_finite() {
        return Err(Error::NonFinite("joint state"));
    }
    Ok(next)
}

/// Total mechanical energy `½q̇ᵀMq̇ + V(q)`.
pub fn mechanical_energy(model: &RobotModel, state: &JointState) -> Result<f64> {
    let m = model.mass_matrix(&state.q)?;
    Ok(0.5 * state.qd.dot(&(m * &state.qd)) + model.potential_energy(&state.q)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbd::test_models::pendulum;
    use approx::assert_relative_eq;

    #[test]
    fn gravity_torque_is_equilibrium() {
        let model = RobotModel::bundled_iiwa();
        let q = DVector::from_vec(vec![0.2, 0.5, -0.3, -1.2, 0.4, 0.9, 0.1]);
        let s = JointState::at_rest(q.clone());
        let g = model.gravity_forces(&q).unwrap();
        let mut state = s.clone();
        for _ in 0..100 {
            state = step(&model, &state, &g, &DVector::zeros(7), 1e-4, Integrator::SemiImplicitEuler).unwrap();
        }
        assert!((&state.q - &s.q).amax() < 1e-12);
        assert!(state.qd.amax() < 1e-12);
    }

    /// Point-mass pendulum released from horizontal: `E = ½ m l² θ̇² + m g l sin θ` is conserved.
    #[test]
    fn pendulum_energy_drift() {
        let model = pendulum();
        let zero = DVector::zeros(1);
        let mut state = JointState::at_rest(DVector::from_element(1, 0.0));
        let e0 = mechanical_energy(&model, &state).unwrap();
        assert_relative_eq!(e0, 0.0, epsilon = 1e-12);
        let mut max_rel: f64 = 0.0;
        for _ in 0..10_000 {
            state = step(&model, &state, &zero, &zero, 1e-4, Integrator::SemiImplicitEuler).unwrap();
            let e = mechanical_energy(&model, &state).unwrap();
            // Normalize by the energy swing m g l.
            max_rel = max_rel.max((e - e0).abs() / 9.81);
        }
        assert!(max_rel < 5e-3, "drift {max_rel}");
        // Analytic check of the energy expression at the final state.
        let th = state.q[0];
        let w = state.qd[0];
        let e = 0.5 * w * w + 9.81 * th.sin();
        // Both terms are O(10); compare at that scale.
        assert_relative_eq!(e, mechanical_energy(&model, &state).unwrap(), epsilon = 1e-8);
    }

    #[test]
    fn passive_iiwa_energy_drift() {
        let model = RobotModel::bundled_iiwa();
        let zero = DVector::zeros(7);
        let q = DVector::from_vec(vec![0.3, 0.7, -0.2, -1.0, 0.5, 0.8, 0.0]);
        let mut state = JointState::new(q, DVector::from_vec(vec![0.5, -0.3, 0.4, 0.2, -0.6, 0.3, 0.8]));
        let e0 = mechanical_energy(&model, &state).unwrap();
        let ke0 = 0.5 * state.qd.dot(&(model.mass_matrix(&state.q).unwrap() * &state.qd));
        let scale = e0.abs().max(ke0);
        let mut worst: f64 = 0.0;
        for _ in 0..2000 {
            state = step(&model, &state, &zero, &zero, 5e-4, Integrator::Rk4).unwrap();
            worst = worst.max((mechanical_energy(&model, &state).unwrap() - e0).abs() / scale);
        }
        assert!(worst < 1e-3, "relative drift {worst}");
    }

    #[test]
    fn first_order_convergence() {
        let model = pendulum();
        let zero = DVector::zeros(1);
        let run = |dt: f64| {
            let mut s = JointState::at_rest(DVector::from_element(1, 0.0));
            let steps = (0.5 / dt).round() as usize;
            for _ in 0..steps {
                s = step(&model, &s, &zero, &zero, dt, Integrator::SemiImplicitEuler).unwrap();
            }
            s.q[0]
        };
        let reference = run(1e-5);
        let e1 = (run(1e-3) - reference).abs();
        let e2 = (run(5e-4) - reference).abs();
        let ratio = e1 / e2;
        assert!(ratio > 1.6 && ratio < 2.6, "ratio {ratio}");
    }

    #[test]
    fn rejects_bad_step() {
        let model = pendulum();
        let s = JointState::at_rest(DVector::zeros(1));
        let z = DVector::zeros(1);
        assert!(step(&model, &s, &z, &z, 0.0, Integrator::Rk4).is_err());
        let nan = DVector::from_element(1, f64::NAN);
        assert!(step(&model, &s, &nan, &z, 1e-3, Integrator::Rk4).is_err());
    }
}
