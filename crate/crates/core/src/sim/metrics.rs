use nalgebra::{DMatrix, DVector, Vector3};
use serde::Serialize;

use super::scenario::{EventEntry, EventKind, PayloadEstimate};
use crate::error::Result;
use crate::rbd::{mass_cholesky, JointState, RobotModel};

/// A point mass attached to the plant only.
#[derive(Debug, Clone, PartialEq)]
pub struct Payload {
    pub frame: usize,
    pub point: Vector3<f64>,
    pub mass: f64,
}

/// External loads at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalLoad {
    /// Joint torque from scripted forces and torques, applied to the plant.
    pub tau_ext: DVector<f64>,
    /// External torque as the controller measures it (before noise).
    pub measured: DVector<f64>,
    /// Unmodeled masses currently attached; they act through the plant model only.
    pub payloads: Vec<Payload>,
}

/// `Jᵀ_trans f` for a world-frame force at `point` of `frame`.
fn force_torque(model: &RobotModel, q: &DVector<f64>, frame: usize, point: &Vector3<f64>, force: &Vector3<f64>) -> Result<DVector<f64>> {
    let j = model.jacobian(q, frame, point)?;
    Ok(j.rows(0, 3).transpose() * force)
}

/// Sum the events active at `t`. `qdd` is the latest joint acceleration, used by measured payload
/// estimates.
pub fn apply_events(
    events: &[EventEntry],
    t: f64,
    model: &RobotModel,
    state: &JointState,
    qdd: &DVector<f64>,
) -> Result<ExternalLoad> {
    let n = model.dof();
    let mut load = ExternalLoad {
        tau_ext: DVector::zeros(n),
        measured: DVector::zeros(n),
        payloads: Vec::new(),
    };
    for e in events.iter().filter(|e| e.active(t)) {
        let scale = e.factor(t);
        match &e.kind {
            EventKind::CartesianForce { frame, point, force, .. } => {
                let f = Vector3::from_column_slice(force) * scale;
                let tau = force_torque(model, &state.q, frame.unwrap_or(model.tool_frame()), &Vector3::from_column_slice(point), &f)?;
                load.tau_ext += &tau;
                load.measured += tau;
            }
            EventKind::JointTorque { torque, .. } => {
                let tau = DVector::from_column_slice(torque) * scale;
                load.tau_ext += &tau;
                load.measured += tau;
            }
            EventKind::UnmodeledMass { mass, frame, point, estimate } => {
                let frame = frame.unwrap_or(model.tool_frame());
                let point = Vector3::from_column_slice(point);
                let weight = model.gravity * *mass;
                let force = match estimate {
                    PayloadEstimate::None => None,
                    PayloadEstimate::Gravity => Some(weight),
                    PayloadEstimate::Measured => {
                        let j = model.jacobian(&state.q, frame, &point)?;
                        let drift = model.jacobian_dot_qd(&state.q, &state.qd, frame, &point)?;
                        let a = j.rows(0, 3) * qdd + drift.rows(0, 3);
                        Some(weight - Vector3::new(a[0], a[1], a[2]) * *mass)
                    }
                };
                if let Some(f) = force {
                    load.measured += force_torque(model, &state.q, frame, &point, &f)?;
                }
                load.payloads.push(Payload { frame, point, mass: *mass });
            }
        }
    }
    Ok(load)
}

/// The plant: `model` with every payload attached.
pub fn plant_model(model: &RobotModel, payloads: &[Payload]) -> Result<RobotModel> {
    payloads
        .iter()
        .try_fold(model.clone(), |m, p| m.with_point_mass(p.frame, p.point, p.mass))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EnergyMetrics {
    /// `½τ'ᵀM⁻¹τ'` with `τ' = τ − ν − g`.
    pub e_acc: f64,
    /// `½τᵀM⁻¹τ` over the full command.
    pub e_acc_full: f64,
    pub e_kin_total: f64,
    /// `½ẋᵀΛẋ` with `Λ = (J M⁻¹ Jᵀ + εI)⁻¹`.
    pub e_kin_task: f64,
    pub e_kin_null: f64,
}

pub(crate) fn energy_from(
    mass: &DMatrix<f64>,
    minv: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    compensation: &DVector<f64>,
    qd: &DVector<f64>,
    tau: &DVector<f64>,
    jacobian: &DMatrix<f64>,
    epsilon: f64,
) -> EnergyMetrics {
    let quad = |v: &DVector<f64>| {
        let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        0.5 * v.dot(&minv(&m).column(0))
    };
    let e_acc = quad(&(tau - compensation));
    let e_acc_full = quad(tau);
    let e_kin_total = 0.5 * qd.dot(&(mass * qd));
    let e_kin_task = if jacobian.nrows() == 0 {
        0.0
    } else {
        let xd = jacobian * qd;
        let m = jacobian.nrows();
        let inv_lambda = jacobian * minv(&jacobian.transpose()) + DMatrix::identity(m, m) * epsilon;
        match inv_lambda.clone().cholesky() {
            Some(c) => 0.5 * xd.dot(&c.solve(&xd)),
            None => {
                let pinv = inv_lambda.pseudo_inverse(1e-12).unwrap_or_else(|_| DMatrix::zeros(m, m));
                0.5 * xd.dot(&(pinv * &xd))
            }
        }
    };
    EnergyMetrics {
        e_acc,
        e_acc_full,
        e_kin_total,
        e_kin_task,
        e_kin_null: e_kin_total - e_kin_task,
    }
}

/// Acceleration energy of `tau` and the task/null split of the kinetic energy for the stacked
/// task Jacobian `jacobian`.
pub fn energy_metrics(
    model: &RobotModel,
    state: &JointState,
    tau: &DVector<f64>,
    jacobian: &DMatrix<f64>,
    epsilon: f64,
) -> Result<EnergyMetrics> {
    let mass = model.mass_matrix(&state.q)?;
    let chol = mass_cholesky(&mass)?;
    let comp = model.bias_forces(&state.q, &state.qd)? + model.gravity_forces(&state.q)?;
    Ok(energy_from(&mass, |b| chol.solve(b), &comp, &state.qd, tau, jacobian, epsilon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::Profile;
    use approx::assert_relative_eq;

    fn iiwa_state() -> (RobotModel, JointState) {
        let model = RobotModel::bundled_iiwa();
        let q = DVector::from_vec(vec![0.1, 0.6, -0.2, -1.3, 0.3, 0.8, 0.2]);
        (model, JointState::at_rest(q))
    }

    fn zero7() -> DVector<f64> {
        DVector::zeros(7)
    }

    fn event(start: f64, duration: Option<f64>, kind: EventKind) -> EventEntry {
        EventEntry { start, duration, kind }
    }

    #[test]
    fn no_events_no_torque() {
        let (model, state) = iiwa_state();
        let load = apply_events(&[], 0.5, &model, &state, &zero7()).unwrap();
        assert_eq!(load.tau_ext.amax(), 0.0);
        assert!(load.payloads.is_empty());
        let e = event(1.0, Some(0.4), EventKind::JointTorque { torque: vec![1.0; 7], profile: Profile::Constant });
        let load = apply_events(std::slice::from_ref(&e), 0.5, &model, &state, &zero7()).unwrap();
        assert_eq!(load.tau_ext.amax(), 0.0);
        let load = apply_events(std::slice::from_ref(&e), 1.4, &model, &state, &zero7()).unwrap();
        assert_eq!(load.tau_ext.amax(), 0.0);
        let load = apply_events(&[e], 1.2, &model, &state, &zero7()).unwrap();
        assert_eq!(load.tau_ext, DVector::from_element(7, 1.0));
    }

    #[test]
    fn push_maps_through_translational_jacobian() {
        let (model, state) = iiwa_state();
        let e = event(0.0, Some(0.4), EventKind::CartesianForce { frame: None, point: [0.0; 3], force: [10.0, 0.0, 0.0], profile: Profile::Constant });
        let load = apply_events(&[e], 0.1, &model, &state, &zero7()).unwrap();
        let j = model.jacobian(&state.q, model.tool_frame(), &Vector3::zeros()).unwrap();
        let expect = j.rows(0, 3).transpose() * Vector3::new(10.0, 0.0, 0.0);
        assert!((&load.tau_ext - &expect).amax() < 1e-12);
        assert_eq!(load.tau_ext, load.measured);
    }

    #[test]
    fn payload_gravity_difference() {
        let (model, state) = iiwa_state();
        let e = event(
            0.0,
            None,
            EventKind::UnmodeledMass { mass: 4.1, frame: None, point: [0.0, 0.0, 0.05], estimate: PayloadEstimate::Gravity },
        );
        let load = apply_events(&[e], 0.0, &model, &state, &zero7()).unwrap();
        assert_eq!(load.tau_ext.amax(), 0.0);
        let plant = plant_model(&model, &load.payloads).unwrap();
        // g_plant − g_model is the payload weight pulled back through the Jacobian; the measured
        // torque opposes it (τ_ext = Jᵀ m g with g pointing down).
        let diff = plant.gravity_forces(&state.q).unwrap() - model.gravity_forces(&state.q).unwrap();
        assert!((&diff + &load.measured).amax() < 1e-9, "{diff} vs {}", load.measured);
    }

    #[test]
    fn measured_payload_force_includes_inertia() {
        let (model, state) = iiwa_state();
        let kind = |estimate| EventKind::UnmodeledMass { mass: 2.0, frame: None, point: [0.0; 3], estimate };
        let at_rest = apply_events(&[event(0.0, None, kind(PayloadEstimate::Measured))], 0.0, &model, &state, &zero7()).unwrap();
        let weight = apply_events(&[event(0.0, None, kind(PayloadEstimate::Gravity))], 0.0, &model, &state, &zero7()).unwrap();
        assert!((&at_rest.measured - &weight.measured).amax() < 1e-12);
        let none = apply_events(&[event(0.0, None, kind(PayloadEstimate::None))], 0.0, &model, &state, &zero7()).unwrap();
        assert_eq!(none.measured.amax(), 0.0);
        // Accelerating the tool down at g: the payload is weightless.
        let j = model.jacobian(&state.q, 7, &Vector3::zeros()).unwrap();
        let qdd = j.rows(0, 3).pseudo_inverse(1e-12).unwrap() * Vector3::new(0.0, 0.0, -9.81);
        let falling = apply_events(&[event(0.0, None, kind(PayloadEstimate::Measured))], 0.0, &model, &state, &qdd).unwrap();
        assert!(falling.measured.amax() < 1e-9, "{}", falling.measured);
    }

    #[test]
    fn profiles() {
        assert_relative_eq!(Profile::Ramp.factor(0.25), 0.25);
        assert_relative_eq!(Profile::HalfSine.factor(0.5), 1.0);
        assert_relative_eq!(Profile::Triangle.factor(0.75), 0.5);
        let e = event(1.0, Some(2.0), EventKind::JointTorque { torque: vec![1.0], profile: Profile::Ramp });
        assert_relative_eq!(e.factor(2.0), 0.5);
    }

    #[test]
    fn energies_at_rest_and_zero_command() {
        let (model, state) = iiwa_state();
        let g = model.gravity_forces(&state.q).unwrap();
        let j = model.jacobian(&state.q, 7, &Vector3::zeros()).unwrap();
        let e = energy_metrics(&model, &state, &g, &j, 1e-6).unwrap();
        assert_eq!(e.e_kin_total, 0.0);
        assert_eq!(e.e_kin_task, 0.0);
        assert!(e.e_acc.abs() < 1e-20);
        assert!(e.e_acc_full > 0.0);
    }

    #[test]
    fn null_space_velocity_has_no_task_energy() {
        let (model, mut state) = iiwa_state();
        let j = model.jacobian(&state.q, 7, &Vector3::zeros()).unwrap().rows(3, 2).clone_owned();
        let mass = model.mass_matrix(&state.q).unwrap();
        let chol = mass_cholesky(&mass).unwrap();
        let minv_jt = chol.solve(&j.transpose());
        let lambda = (&j * &minv_jt).try_inverse().unwrap();
        // Torque projector N = I − Jᵀ J̄ᵀ, J̄ = M⁻¹Jᵀ Λ.
        let nproj = DMatrix::identity(7, 7) - j.transpose() * (&minv_jt * lambda).transpose();
        let z = DVector::from_vec(vec![1.0, -0.5, 0.3, 0.8, -0.2, 0.4, 0.6]);
        state.qd = chol.solve(&(nproj * z));
        let e = energy_metrics(&model, &state, &DVector::zeros(7), &j, 0.0).unwrap();
        assert!(e.e_kin_task < 1e-10, "{}", e.e_kin_task);
        assert!(e.e_kin_total > 1e-3);
        assert_relative_eq!(e.e_kin_null, e.e_kin_total, max_relative = 1e-8);
    }

    #[test]
    fn null_energy_nonnegative_for_random_velocity() {
        let (model, mut state) = iiwa_state();
        let j = model.jacobian(&state.q, 7, &Vector3::zeros()).unwrap();
        for k in 0..20 {
            state.qd = DVector::from_fn(7, |i, _| ((i * 7 + k * 3) as f64).sin());
            let e = energy_metrics(&model, &state, &DVector::zeros(7), &j, 1e-6).unwrap();
            assert!(e.e_kin_task >= 0.0);
            assert!(e.e_kin_null >= -1e-9, "{}", e.e_kin_null);
        }
    }
}
