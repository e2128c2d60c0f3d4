//! Desired task accelerations: impedance laws, force-based impedance and a saturated-velocity
//! waypoint tracker.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::rbd::{rotation_log, FramePose, RobotModel};

/// `K·dx + D·dxd`, with `dx = x_d − x` and `dxd = ẋ_d − ẋ`.
pub fn impedance_accel(k: &DMatrix<f64>, d: &DMatrix<f64>, dx: &DVector<f64>, dxd: &DVector<f64>) -> Result<DVector<f64>> {
    let m = dx.len();
    for (what, rows, cols) in [("K", k.nrows(), k.ncols()), ("D", d.nrows(), d.ncols())] {
        if rows != m || cols != m {
            return Err(Error::Dimension {
                what,
                expected: m,
                got: if rows != m { rows } else { cols },
            });
        }
    }
    if dxd.len() != m {
        return Err(Error::Dimension {
            what: "dxd",
            expected: m,
            got: dxd.len(),
        });
    }
    Ok(k * dx + d * dxd)
}

/// Impedance without inertia shaping: `J M⁻¹ Jᵀ f_d`.
pub fn force_impedance_accel(j: &DMatrix<f64>, minv: &DMatrix<f64>, f_d: &DVector<f64>) -> Result<DVector<f64>> {
    if j.nrows() != f_d.len() || minv.nrows() != j.ncols() || minv.ncols() != j.ncols() {
        return Err(Error::Dimension {
            what: "force impedance operands",
            expected: j.nrows(),
            got: f_d.len(),
        });
    }
    Ok(j * (minv * (j.transpose() * f_d)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedLaw {
    /// `v = min(1, v_sat/‖ẋ_d‖²)`.
    #[default]
    Printed,
    /// `v = min(1, v_sat/‖ẋ_d‖)`: exact speed saturation at `v_sat`.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaypointTracker {
    pub waypoints: Vec<Vector3<f64>>,
    pub index: usize,
    pub tolerance: f64,
    pub kp: f64,
    pub kv: f64,
    pub v_sat: f64,
    pub law: SpeedLaw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaypointCommand {
    pub accel: Vector3<f64>,
    /// Speed scaling `v ∈ (0, 1]`.
    pub v: f64,
    pub finished: bool,
}

impl WaypointTracker {
    pub fn new(waypoints: Vec<Vector3<f64>>, tolerance: f64, kp: f64, kv: f64, v_sat: f64) -> Self {
        Self {
            waypoints,
            index: 0,
            tolerance,
            kp,
            kv,
            v_sat,
            law: SpeedLaw::Printed,
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (name, v) in [
            ("tolerance", self.tolerance),
            ("kp", self.kp),
            ("kv", self.kv),
            ("v_sat", self.v_sat),
        ] {
            if !(v.is_finite() && v > 0.0) {
                out.push(Violation::new(name, "must be positive"));
            }
        }
        if self.waypoints.is_empty() {
            out.push(Violation::new("waypoints", "at least one waypoint is required"));
        }
        out
    }

    pub fn current(&self) -> Option<Vector3<f64>> {
        self.waypoints.get(self.index).copied()
    }

    pub fn finished(&self) -> bool {
        self.index >= self.waypoints.len()
    }

    pub fn speed_scale(&self, xd_d: &Vector3<f64>) -> f64 {
        let n = xd_d.norm();
        if n == 0.0 {
            return 1.0;
        }
        let denom = match self.law {
            SpeedLaw::Printed => n * n,
            SpeedLaw::Linear => n,
        };
        (self.v_sat / denom).min(1.0)
    }

    /// `ẍ = −k_v(ẋ_c − v·ẋ_d)` with `ẋ_d = (k_p/k_v)(waypoint − x)`. The index advances once the
    /// current waypoint is within tolerance; the command of that tick still uses it.
    pub fn waypoint_accel(&mut self, x: &Vector3<f64>, xd_c: &Vector3<f64>) -> WaypointCommand {
        let Some(target) = self.current() else {
            return WaypointCommand {
                accel: Vector3::zeros(),
                v: 1.0,
                finished: true,
            };
        };
        let dx = target - x;
        let xd_d = dx * (self.kp / self.kv);
        let v = self.speed_scale(&xd_d);
        let accel = -(xd_c - xd_d * v) * self.kv;
        if dx.norm() < self.tolerance {
            self.index += 1;
        }
        WaypointCommand {
            accel,
            v,
            finished: self.finished(),
        }
    }
}

/// 16 waypoints alternating octagon vertex and center, vertices at `phase + k·45°` in the world
/// (y, z) plane; phase 0 puts the first vertex along +y.
pub fn octagon_waypoints(center: &Vector3<f64>, radius: f64, phase: f64) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(16);
    for k in 0..8 {
        let a = phase + k as f64 * std::f64::consts::FRAC_PI_4;
        out.push(center + Vector3::new(0.0, radius * a.cos(), radius * a.sin()));
        out.push(*center);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskMode {
    /// `ẍ_d = K Δx + D Δẋ` towards a fixed pose.
    Impedance { target: FramePose },
    /// `ẍ_d = J M⁻¹ Jᵀ (K Δx + D Δẋ)` towards a fixed pose.
    ForceImpedance { target: FramePose },
    /// Saturated-velocity point-to-point tracking; uses only the position rows.
    Waypoints(WaypointTracker),
}

/// One prioritized task on a point of a frame. Rows are world-frame linear axes followed by
/// world-frame angular axes, in the order given.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    /// 1 is the highest priority.
    pub priority: u32,
    pub frame: usize,
    pub point: Vector3<f64>,
    pub position_axes: Vec<usize>,
    pub orientation_axes: Vec<usize>,
    pub k: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub mode: TaskMode,
}

/// Task quantities evaluated at one state.
#[derive(Debug, Clone)]
pub struct TaskEval {
    pub jacobian: DMatrix<f64>,
    pub jdot_qd: DVector<f64>,
    /// `x_d − x` (axis-angle for orientation rows).
    pub error: DVector<f64>,
    pub velocity: DVector<f64>,
    pub xdd_d: DVector<f64>,
    /// Waypoint speed scale, 1 for other modes.
    pub v: f64,
    pub finished: bool,
}

fn is_spd(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= 1e-10 * m.amax().max(1.0) && Cholesky::new(m.clone()).is_some()
}

impl TaskSpec {
    pub fn dim(&self) -> usize {
        self.position_axes.len() + self.orientation_axes.len()
    }

    fn rows(&self) -> Vec<usize> {
        self.position_axes
            .iter()
            .copied()
            .chain(self.orientation_axes.iter().map(|a| a + 3))
            .collect()
    }

    pub fn violations(&self, n: usize, frames: usize) -> Vec<Violation> {
        let mut out = Vec::new();
        let m = self.dim();
        if m == 0 {
            out.push(Violation::new("axes", "task selects no rows"));
        }
        if m > n {
            out.push(Violation::new("axes", format!("task dimension {m} exceeds joint count {n}")));
        }
        let mut seen = [false; 6];
        if self.position_axes.iter().chain(&self.orientation_axes).any(|&a| a > 2) {
            out.push(Violation::new("axes", "axis index must be 0, 1 or 2"));
            return out;
        }
        for r in self.rows() {
            if seen[r] {
                out.push(Violation::new("axes", "duplicate axis"));
            } else {
                seen[r] = true;
            }
        }
        if self.frame >= frames {
            out.push(Violation::new("frame", format!("frame {} out of range (0..{frames})", self.frame)));
        }
        if self.k.nrows() != m || !is_spd(&self.k) {
            out.push(Violation::new("stiffness", format!("must be a {m}×{m} symmetric positive-definite matrix")));
        }
        if self.d.nrows() != m || !is_spd(&self.d) {
            out.push(Violation::new("damping", format!("must be a {m}×{m} symmetric positive-definite matrix")));
        }
        if let TaskMode::Waypoints(w) = &self.mode {
            if !self.orientation_axes.is_empty() {
                out.push(Violation::new("mode", "waypoint tracking supports position axes only"));
            }
            out.extend(w.violations());
        }
        out
    }

    /// Select this task's rows from a 6-row quantity.
    pub fn select(&self, full: &DMatrix<f64>) -> DMatrix<f64> {
        full.select_rows(self.rows().iter())
    }

    fn pose_error(position_axes: &[usize], orientation_axes: &[usize], target: &FramePose, pose: &FramePose) -> DVector<f64> {
        let dp = target.position - pose.position;
        let dr = rotation_log(&(target.rotation * pose.rotation.transpose()));
        let mut e = DVector::zeros(position_axes.len() + orientation_axes.len());
        let mut i = 0;
        for &a in position_axes {
            e[i] = dp[a];
            i += 1;
        }
        for &a in orientation_axes {
            e[i] = dr[a];
            i += 1;
        }
        e
    }

    /// Evaluate the Jacobian, drift and desired acceleration. Waypoint tasks advance their index.
    pub fn evaluate(
        &mut self,
        model: &RobotModel,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        m_chol: &Cholesky<f64, Dyn>,
    ) -> Result<TaskEval> {
        let j6 = model.jacobian(q, self.frame, &self.point)?;
        let drift6 = model.jacobian_dot_qd(q, qd, self.frame, &self.point)?;
        let jacobian = self.select(&j6);
        let jdot_qd = DVector::from_iterator(self.dim(), self.rows().into_iter().map(|r| drift6[r]));
        let velocity = &jacobian * qd;
        let frame_pose = model.forward_kinematics(q, self.frame)?;
        let pose = FramePose {
            position: frame_pose.position + frame_pose.rotation * self.point,
            rotation: frame_pose.rotation,
        };
        let zero = DVector::zeros(self.dim());
        let (error, xdd_d, v, finished) = match &mut self.mode {
            TaskMode::Impedance { target } => {
                let e = Self::pose_error(&self.position_axes, &self.orientation_axes, target, &pose);
                let a = impedance_accel(&self.k, &self.d, &e, &(-&velocity))?;
                (e, a, 1.0, false)
            }
            TaskMode::ForceImpedance { target } => {
                let e = Self::pose_error(&self.position_axes, &self.orientation_axes, target, &pose);
                let f = impedance_accel(&self.k, &self.d, &e, &(-&velocity))?;
                let a = &jacobian * m_chol.solve(&(jacobian.transpose() * f));
                (e, a, 1.0, false)
            }
            TaskMode::Waypoints(tracker) => {
                let mut x = Vector3::zeros();
                let mut xd = Vector3::zeros();
                for (i, &a) in self.position_axes.iter().enumerate() {
                    x[a] = pose.position[a];
                    xd[a] = velocity[i];
                }
                let target = tracker.current();
                let cmd = tracker.waypoint_accel(&x, &xd);
                let mut e = zero.clone();
                let mut a = zero;
                for (i, &ax) in self.position_axes.iter().enumerate() {
                    if let Some(t) = target {
                        e[i] = t[ax] - x[ax];
                    }
                    a[i] = cmd.accel[ax];
                }
                (e, a, cmd.v, cmd.finished)
            }
        };
        Ok(TaskEval {
            jacobian,
            jdot_qd,
            error,
            velocity,
            xdd_d,
            v,
            finished,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn impedance_examples() {
        let k = DMatrix::from_diagonal_element(2, 2, 1000.0);
        let d = DMatrix::from_diagonal_element(2, 2, 63.0);
        let z = DVector::zeros(2);
        assert_eq!(impedance_accel(&k, &d, &z, &z).unwrap(), z);
        let a = impedance_accel(&k, &d, &DVector::from_vec(vec![0.01, 0.0]), &z).unwrap();
        assert_relative_eq!(a[0], 10.0, epsilon = 1e-12);
        assert_eq!(a[1], 0.0);
        assert!(impedance_accel(&k, &d, &DVector::zeros(3), &DVector::zeros(3)).is_err());
    }

    proptest! {
        #[test]
        fn impedance_gradient_is_stiffness(a in prop::collection::vec(-1.0f64..1.0, 9),
                                           dx in prop::collection::vec(-1.0f64..1.0, 3)) {
            let b = DMatrix::from_vec(3, 3, a);
            let k = &b * b.transpose() + DMatrix::identity(3, 3);
            let d = DMatrix::identity(3, 3);
            let dx = DVector::from_vec(dx);
            let z = DVector::zeros(3);
            let h = 1e-6;
            for j in 0..3 {
                let mut p = dx.clone();
                let mut m = dx.clone();
                p[j] += h;
                m[j] -= h;
                let col = (impedance_accel(&k, &d, &p, &z).unwrap() - impedance_accel(&k, &d, &m, &z).unwrap()) / (2.0 * h);
                prop_assert!((col - k.column(j)).amax() < 1e-6);
            }
        }
    }

    #[test]
    fn force_impedance_examples() {
        let j = DMatrix::from_element(1, 1, 1.0);
        let minv = DMatrix::from_element(1, 1, 0.5);
        assert_eq!(force_impedance_accel(&j, &minv, &DVector::zeros(1)).unwrap()[0], 0.0);
        assert_relative_eq!(force_impedance_accel(&j, &minv, &DVector::from_element(1, 3.0)).unwrap()[0], 1.5);
    }

    #[test]
    fn force_impedance_is_inverse_task_inertia() {
        let m = RobotModel::bundled_iiwa();
        let q = DVector::from_vec(vec![0.2, 0.6, -0.3, -1.4, 0.5, 0.9, 0.1]);
        let j = m.jacobian(&q, 7, &Vector3::zeros()).unwrap().rows(0, 3).clone_owned();
        let mm = m.mass_matrix(&q).unwrap();
        let minv = mm.clone().cholesky().unwrap().inverse();
        let b = m.task_dynamics(&q, &j, 0.0).unwrap();
        let f = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let a = force_impedance_accel(&j, &minv, &f).unwrap();
        let expected = b.lambda.clone().cholesky().unwrap().solve(&f);
        assert!((a - expected).amax() < 1e-9);
    }

    fn tracker(points: Vec<Vector3<f64>>) -> WaypointTracker {
        WaypointTracker::new(points, 0.001, 400.0, 40.0, 0.4)
    }

    #[test]
    fn at_waypoint_zero_command_and_advance() {
        let p = Vector3::new(0.1, 0.2, 0.3);
        let mut t = tracker(vec![p, Vector3::zeros()]);
        let c = t.waypoint_accel(&p, &Vector3::zeros());
        assert_eq!(c.accel, Vector3::zeros());
        assert_eq!(t.index, 1);
        assert!(!c.finished);
    }

    #[test]
    fn saturated_printed_law() {
        let mut t = tracker(vec![Vector3::new(0.3, 0.0, 0.0)]);
        let xd_c = Vector3::new(0.05, 0.0, 0.0);
        let c = t.waypoint_accel(&Vector3::zeros(), &xd_c);
        let v = 0.4 / 9.0;
        assert_relative_eq!(c.v, v, epsilon = 1e-12);
        let expected = -(xd_c - Vector3::new(3.0 * v, 0.0, 0.0)) * 40.0;
        assert!((c.accel - expected).norm() < 1e-12);
        assert_relative_eq!(3.0 * v, 0.1333, epsilon = 1e-4);
        assert_eq!(t.index, 0);
    }

    #[test]
    fn unsaturated_reduces_to_pd() {
        let mut t = tracker(vec![Vector3::new(0.01, 0.02, 0.0)]);
        let x = Vector3::zeros();
        let xd_c = Vector3::new(0.1, 0.0, -0.2);
        let c = t.waypoint_accel(&x, &xd_c);
        assert_eq!(c.v, 1.0);
        let expected = (Vector3::new(0.01, 0.02, 0.0) - x) * 400.0 - xd_c * 40.0;
        assert!((c.accel - expected).norm() < 1e-10);
    }

    #[test]
    fn linear_law_saturates_speed() {
        let mut t = tracker(vec![Vector3::new(0.3, 0.0, 0.0)]);
        t.law = SpeedLaw::Linear;
        let c = t.waypoint_accel(&Vector3::zeros(), &Vector3::zeros());
        assert_relative_eq!(c.accel.norm() / 40.0, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn exhausted_list_is_terminal() {
        let mut t = tracker(vec![]);
        let c = t.waypoint_accel(&Vector3::zeros(), &Vector3::new(1.0, 0.0, 0.0));
        assert!(c.finished);
        assert_eq!(c.accel, Vector3::zeros());
    }

    proptest! {
        #[test]
        fn speed_scale_in_unit_interval(dx in prop::collection::vec(-1.0f64..1.0, 3),
                                         xd in prop::collection::vec(-1.0f64..1.0, 3)) {
            let mut t = tracker(vec![Vector3::zeros()]);
            let dx = Vector3::from_vec(dx);
            let c = t.waypoint_accel(&(-dx), &Vector3::from_vec(xd));
            prop_assert!(c.v > 0.0 && c.v <= 1.0);
            let xd_d = dx.norm() * 10.0;
            if xd_d > 0.0 {
                let speed = c.v * xd_d;
                let expected = if xd_d * xd_d > 0.4 { 0.4 / xd_d } else { xd_d };
                prop_assert!((speed - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn octagon_geometry() {
        let c = Vector3::new(0.55, -0.05, 0.22);
        let w = octagon_waypoints(&c, 0.3, 0.0);
        assert_eq!(w.len(), 16);
        assert!((w[0] - Vector3::new(0.55, 0.25, 0.22)).norm() < 1e-12);
        for k in 0..8 {
            assert!(((w[2 * k] - c).norm() - 0.3).abs() < 1e-12);
            assert_eq!(w[2 * k + 1], c);
            let a = w[2 * k] - c;
            let b = w[(2 * k + 2) % 16] - c;
            let ang = (a.dot(&b) / 0.09).clamp(-1.0, 1.0).acos();
            assert_relative_eq!(ang, std::f64::consts::FRAC_PI_4, epsilon = 1e-9);
        }
    }

    #[test]
    fn orientation_error_projects_world_axes() {
        let m = RobotModel::bundled_iiwa();
        let q = DVector::from_vec(vec![0.0, 0.7, 0.0, -1.5, 0.0, 0.94, 0.0]);
        let pose = m.forward_kinematics(&q, 7).unwrap();
        let rot = crate::rbd::axis_rotation(&Vector3::x(), 15f64.to_radians());
        let mut task = TaskSpec {
            name: "rot".into(),
            priority: 1,
            frame: 7,
            point: Vector3::zeros(),
            position_axes: vec![],
            orientation_axes: vec![0, 1],
            k: DMatrix::from_diagonal_element(2, 2, 100.0),
            d: DMatrix::from_diagonal_element(2, 2, 20.0),
            mode: TaskMode::Impedance {
                target: FramePose {
                    position: pose.position,
                    rotation: rot * pose.rotation,
                },
            },
        };
        assert!(task.violations(7, 8).is_empty());
        let chol = m.mass_matrix(&q).unwrap().cholesky().unwrap();
        let e = task.evaluate(&m, &q, &DVector::zeros(7), &chol).unwrap();
        assert_relative_eq!(e.error[0], 15f64.to_radians(), epsilon = 1e-12);
        assert!(e.error[1].abs() < 1e-12);
        assert_relative_eq!(e.xdd_d[0], 100.0 * 15f64.to_radians(), epsilon = 1e-9);
        assert_eq!(e.jacobian.nrows(), 2);
    }

    #[test]
    fn violations_reported() {
        let task = TaskSpec {
            name: "bad".into(),
            priority: 1,
            frame: 9,
            point: Vector3::zeros(),
            position_axes: vec![0, 0],
            orientation_axes: vec![],
            k: DMatrix::from_diagonal_element(2, 2, -1.0),
            d: DMatrix::identity(2, 2),
            mode: TaskMode::Waypoints(tracker(vec![])),
        };
        let v = task.violations(7, 8);
        for f in ["axes", "frame", "stiffness", "waypoints"] {
            assert!(v.iter().any(|x| x.field == f), "{f} missing in {v:?}");
        }
    }
}
