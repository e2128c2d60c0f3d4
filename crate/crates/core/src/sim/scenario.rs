//! Scenario files: JSON schema, validation and conversion into runtime objects.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::integrate::Integrator;
use crate::error::{Error, Result, Violation};
use crate::limits::LimitSet;
use crate::rbd::{axis_rotation, FramePose, RobotModel};
use crate::solvers::{SolverConfig, SolverKind};
use crate::tasks::{octagon_waypoints, SpeedLaw, TaskMode, TaskSpec, WaypointTracker};

pub const BUNDLED_MODEL: &str = "bundled:iiwa14";

fn bundled() -> String {
    BUNDLED_MODEL.to_string()
}
fn dcts() -> String {
    "dcts".to_string()
}
fn control_dt() -> f64 {
    1e-3
}
fn integrator_dt() -> f64 {
    1e-4
}
fn unit_x() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}
fn one() -> Gain {
    Gain::Scalar(1.0)
}
fn yes() -> bool {
    true
}

/// A gain or bound given as a scalar (broadcast), a diagonal or a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gain {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl Gain {
    fn matrix(&self, m: usize) -> Option<DMatrix<f64>> {
        match self {
            Gain::Scalar(v) => Some(DMatrix::identity(m, m) * *v),
            Gain::Diagonal(d) if d.len() == m => Some(DMatrix::from_diagonal(&DVector::from_column_slice(d))),
            Gain::Full(rows) if rows.len() == m && rows.iter().all(|r| r.len() == m) => {
                Some(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
            }
            _ => None,
        }
    }

    fn vector(&self, n: usize) -> Option<DVector<f64>> {
        match self {
            Gain::Scalar(v) => Some(DVector::from_element(n, *v)),
            Gain::Diagonal(d) if d.len() == n => Some(DVector::from_column_slice(d)),
            _ => None,
        }
    }
}

/// Per-joint replacement of model limits (0-based joint index, SI units).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitOverride {
    pub joint: usize,
    pub q_min: Option<f64>,
    pub q_max: Option<f64>,
    pub v_min: Option<f64>,
    pub v_max: Option<f64>,
    pub tau_min: Option<f64>,
    pub tau_max: Option<f64>,
}

/// Impedance target. `position` is absolute; otherwise the initial pose is moved by
/// `translation` and rotated by `rotation_deg` about the world axis `rotation_axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetEntry {
    #[serde(default)]
    pub position: Option<[f64; 3]>,
    #[serde(default)]
    pub translation: [f64; 3],
    #[serde(default = "unit_x")]
    pub rotation_axis: [f64; 3],
    #[serde(default)]
    pub rotation_deg: f64,
}

impl Default for TargetEntry {
    fn default() -> Self {
        Self {
            position: None,
            translation: [0.0; 3],
            rotation_axis: unit_x(),
            rotation_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OctagonEntry {
    pub center: [f64; 3],
    pub radius: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModeEntry {
    Impedance {
        #[serde(default)]
        target: TargetEntry,
    },
    ForceImpedance {
        #[serde(default)]
        target: TargetEntry,
    },
    Waypoints {
        #[serde(default)]
        points: Vec<[f64; 3]>,
        #[serde(default)]
        octagon: Option<OctagonEntry>,
        /// Go to the octagon center before the pattern.
        #[serde(default = "yes")]
        lead_in: bool,
        tolerance: f64,
        kp: f64,
        kv: f64,
        v_sat: f64,
        #[serde(default)]
        speed_law: SpeedLaw,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub name: String,
    #[serde(default = "first")]
    pub priority: u32,
    /// Defaults to the tool frame.
    #[serde(default)]
    pub frame: Option<usize>,
    #[serde(default)]
    pub point: [f64; 3],
    #[serde(default)]
    pub position_axes: Vec<usize>,
    #[serde(default)]
    pub orientation_axes: Vec<usize>,
    #[serde(default = "one")]
    pub stiffness: Gain,
    #[serde(default = "one")]
    pub damping: Gain,
    pub mode: ModeEntry,
}

fn first() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsEntry {
    /// Joint acceleration bound [rad/s²]; `a_min` defaults to `−a_max`.
    pub a_max: Gain,
    #[serde(default)]
    pub a_min: Option<Gain>,
    #[serde(default)]
    pub brake_accel: Option<f64>,
    /// Relative safety margin: the controller sees position and velocity limits shrunk by
    /// `margin·|limit|`. Violations are still counted against the robot's limits.
    #[serde(default)]
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadEstimate {
    /// The controller sees no external torque from the payload.
    None,
    /// The controller sees the static payload weight mapped through the Jacobian.
    Gravity,
    /// The controller sees the force the payload exerts, `m(g − a)`, with the tool acceleration
    /// of the previous tick (a joint-torque-sensor estimate).
    #[default]
    Measured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Constant,
    /// Linear rise from zero over the event.
    Ramp,
    /// `sin(π t/duration)`: zero at both ends.
    HalfSine,
    /// Rise over the first half, fall over the second.
    Triangle,
}

impl Profile {
    /// Amplitude factor at `u = (t − start)/duration ∈ [0, 1)`.
    pub fn factor(self, u: f64) -> f64 {
        match self {
            Profile::Constant => 1.0,
            Profile::Ramp => u,
            Profile::HalfSine => (std::f64::consts::PI * u).sin(),
            Profile::Triangle => 1.0 - (2.0 * u - 1.0).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventKind {
    /// World-frame force [N] at `point` of `frame`.
    CartesianForce {
        #[serde(default)]
        frame: Option<usize>,
        #[serde(default)]
        point: [f64; 3],
        force: [f64; 3],
        #[serde(default)]
        profile: Profile,
    },
    JointTorque {
        torque: Vec<f64>,
        #[serde(default)]
        profile: Profile,
    },
    /// A mass unknown to the controller's model, rigidly attached at `point` of `frame`.
    UnmodeledMass {
        mass: f64,
        #[serde(default)]
        frame: Option<usize>,
        #[serde(default)]
        point: [f64; 3],
        #[serde(default)]
        estimate: PayloadEstimate,
    },
}

/// Unknown keys are rejected by the flattened kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEntry {
    pub start: f64,
    /// Omitted: active until the end of the run.
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl EventEntry {
    pub fn active(&self, t: f64) -> bool {
        t >= self.start && self.duration.is_none_or(|d| t < self.start + d)
    }

    pub fn factor(&self, t: f64) -> f64 {
        let profile = match &self.kind {
            EventKind::CartesianForce { profile, .. } | EventKind::JointTorque { profile, .. } => *profile,
            EventKind::UnmodeledMass { .. } => Profile::Constant,
        };
        match self.duration {
            Some(d) if d > 0.0 => profile.factor(((t - self.start) / d).clamp(0.0, 1.0)),
            _ => 1.0,
        }
    }
}

/// Scenario file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// `bundled:iiwa14` or a model file path relative to the scenario file.
    #[serde(default = "bundled")]
    pub model: String,
    #[serde(default)]
    pub limit_overrides: Vec<LimitOverride>,
    pub q0: Vec<f64>,
    #[serde(default)]
    pub qd0: Option<Vec<f64>>,
    #[serde(default = "dcts")]
    pub solver: String,
    #[serde(default)]
    pub solver_config: SolverConfig,
    pub tasks: Vec<TaskEntry>,
    /// Joint-limit handling; omitted disables position/velocity/acceleration bounds.
    #[serde(default)]
    pub limits: Option<LimitsEntry>,
    #[serde(default)]
    pub events: Vec<EventEntry>,
    pub duration: f64,
    #[serde(default = "control_dt")]
    pub control_dt: f64,
    #[serde(default = "integrator_dt")]
    pub integrator_dt: f64,
    #[serde(default)]
    pub integrator: Integrator,
    /// Standard deviation [Nm] of Gaussian noise on the external torque seen by the controller.
    #[serde(default)]
    pub tau_ext_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

/// A resolved scenario, ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    /// Controller model (limits overridden); also the plant when no payload is attached.
    pub model: RobotModel,
    pub solver: SolverKind,
    pub q0: DVector<f64>,
    pub qd0: DVector<f64>,
    /// Sorted by priority.
    pub tasks: Vec<TaskSpec>,
    pub limits: Option<LimitSet>,
    pub warnings: Vec<String>,
}

/// Result of checking a scenario without running it.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Bundled scenario catalog: (file name, contents).
pub const BUNDLED_SCENARIOS: [(&str, &str); 5] = [
    ("rotation-hold-15deg.json", include_str!("../../scenarios/rotation-hold-15deg.json")),
    ("push-recovery.json", include_str!("../../scenarios/push-recovery.json")),
    ("star-octagon.json", include_str!("../../scenarios/star-octagon.json")),
    ("limit-push.json", include_str!("../../scenarios/limit-push.json")),
    ("payload-drop.json", include_str!("../../scenarios/payload-drop.json")),
];

fn vec3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl ScenarioFile {
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse(origin, &e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn load_model(&self, base: Option<&Path>) -> Result<RobotModel> {
        if self.model == BUNDLED_MODEL {
            return Ok(RobotModel::bundled_iiwa());
        }
        let p = PathBuf::from(&self.model);
        let p = match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p,
        };
        RobotModel::load(p)
    }

    /// Apply limit overrides, reporting bad indices.
    fn apply_overrides(&self, model: &mut RobotModel, out: &mut Vec<Violation>) {
        let n = model.dof();
        for (i, o) in self.limit_overrides.iter().enumerate() {
            if o.joint >= n {
                out.push(Violation::new(format!("limit_overrides[{i}].joint"), format!("joint {} out of range (0..{n})", o.joint)));
                continue;
            }
            let l = &mut model.limits;
            let j = o.joint;
            let set = |dst: &mut DVector<f64>, v: Option<f64>| {
                if let Some(v) = v {
                    dst[j] = v;
                }
            };
            set(&mut l.q_min, o.q_min);
            set(&mut l.q_max, o.q_max);
            set(&mut l.v_min, o.v_min);
            set(&mut l.v_max, o.v_max);
            set(&mut l.tau_min, o.tau_min);
            set(&mut l.tau_max, o.tau_max);
        }
        let l = &model.limits;
        for j in 0..n {
            for (name, lo, hi) in [
                ("q", l.q_min[j], l.q_max[j]),
                ("v", l.v_min[j], l.v_max[j]),
                ("tau", l.tau_min[j], l.tau_max[j]),
            ] {
                if !(lo < hi) {
                    out.push(Violation::new(format!("limits.{name}_min[{j}]"), format!("{name}_min ({lo}) must be below {name}_max ({hi})")));
                }
            }
            if !(l.v_min[j] <= 0.0 && l.v_max[j] >= 0.0) {
                out.push(Violation::new(format!("limits.v_max[{j}]"), "velocity limits must bracket zero"));
            }
            if !(l.tau_min[j] <= 0.0 && l.tau_max[j] >= 0.0) {
                out.push(Violation::new(format!("limits.tau_max[{j}]"), "torque limits must bracket zero"));
            }
        }
    }

    fn build_task(
        &self,
        idx: usize,
        entry: &TaskEntry,
        model: &RobotModel,
        q0: &DVector<f64>,
        out: &mut Vec<Violation>,
    ) -> Option<TaskSpec> {
        let field = |f: &str| format!("tasks[{idx}].{f}");
        let frame = entry.frame.unwrap_or(model.tool_frame());
        let m = entry.position_axes.len() + entry.orientation_axes.len();
        let k = entry.stiffness.matrix(m);
        let d = entry.damping.matrix(m);
        if k.is_none() {
            out.push(Violation::new(field("stiffness"), format!("expected a scalar, {m} diagonal entries or a {m}×{m} matrix")));
        }
        if d.is_none() {
            out.push(Violation::new(field("damping"), format!("expected a scalar, {m} diagonal entries or a {m}×{m} matrix")));
        }
        if entry.priority == 0 {
            out.push(Violation::new(field("priority"), "priorities start at 1"));
        }
        let point = vec3(&entry.point);
        let initial_pose = if frame < model.frame_count() && q0.len() == model.dof() {
            model.forward_kinematics(q0, frame).ok().map(|p| FramePose {
                position: p.position + p.rotation * point,
                rotation: p.rotation,
            })
        } else {
            None
        };
        let target = |t: &TargetEntry, out: &mut Vec<Violation>| -> Option<FramePose> {
            let axis = vec3(&t.rotation_axis);
            if !(axis.norm() > 1e-9) {
                out.push(Violation::new(field("mode.target.rotation_axis"), "must be non-zero"));
                return None;
            }
            let start = initial_pose.clone()?;
            let r = axis_rotation(&axis.normalize(), t.rotation_deg.to_radians());
            Some(FramePose {
                position: t.position.map(|p| vec3(&p)).unwrap_or(start.position + vec3(&t.translation)),
                rotation: r * start.rotation,
            })
        };
        let mode = match &entry.mode {
            ModeEntry::Impedance { target: t } => TaskMode::Impedance { target: target(t, out)? },
            ModeEntry::ForceImpedance { target: t } => TaskMode::ForceImpedance { target: target(t, out)? },
            ModeEntry::Waypoints {
                points,
                octagon,
                lead_in,
                tolerance,
                kp,
                kv,
                v_sat,
                speed_law,
            } => {
                let mut wps: Vec<Vector3<f64>> = Vec::new();
                if let Some(o) = octagon {
                    if !(o.radius > 0.0) {
                        out.push(Violation::new(field("mode.octagon.radius"), "must be positive"));
                    }
                    let c = vec3(&o.center);
                    if *lead_in {
                        wps.push(c);
                    }
                    wps.extend(octagon_waypoints(&c, o.radius, o.phase_deg.to_radians()));
                }
                wps.extend(points.iter().map(vec3));
                if wps.is_empty() {
                    out.push(Violation::new(field("mode.points"), "waypoint task needs points or an octagon"));
                }
                let mut tracker = WaypointTracker::new(wps, *tolerance, *kp, *kv, *v_sat);
                tracker.law = *speed_law;
                TaskMode::Waypoints(tracker)
            }
        };
        let spec = TaskSpec {
            name: entry.name.clone(),
            priority: entry.priority,
            frame,
            point,
            position_axes: entry.position_axes.clone(),
            orientation_axes: entry.orientation_axes.clone(),
            k: k?,
            d: d?,
            mode,
        };
        for v in spec.violations(model.dof(), model.frame_count()) {
            out.push(Violation::new(field(&v.field), v.message));
        }
        Some(spec)
    }

    /// Check everything and build the runtime scenario. All violations are collected.
    pub fn resolve(&self, base: Option<&Path>) -> (Option<Scenario>, ValidationReport) {
        let mut report = ValidationReport::default();
        let v = &mut report.violations;
        let mut model = match self.load_model(base) {
            Ok(m) => m,
            Err(e) => {
                v.push(Violation::new("model", e.to_string()));
                return (None, report);
            }
        };
        self.apply_overrides(&mut model, v);
        let n = model.dof();

        let solver = match self.solver.parse::<SolverKind>() {
            Ok(s) => Some(s),
            Err(e) => {
                v.push(Violation::new("solver", e.to_string()));
                None
            }
        };
        v.extend(self.solver_config.violations());

        if self.q0.len() != n {
            v.push(Violation::new("q0", format!("expected {n} entries, got {}", self.q0.len())));
        }
        let q0 = DVector::from_vec(self.q0.clone());
        let qd0 = DVector::from_vec(self.qd0.clone().unwrap_or_else(|| vec![0.0; n]));
        if qd0.len() != n {
            v.push(Violation::new("qd0", format!("expected {n} entries, got {}", qd0.len())));
        }
        if q0.len() == n {
            for j in 0..n {
                if q0[j] < model.limits.q_min[j] || q0[j] > model.limits.q_max[j] {
                    v.push(Violation::new(format!("q0[{j}]"), format!("{} outside joint limits [{}, {}]", q0[j], model.limits.q_min[j], model.limits.q_max[j])));
                }
            }
        }
        if q0.iter().chain(qd0.iter()).any(|x| !x.is_finite()) {
            v.push(Violation::new("q0", "initial state must be finite"));
        }

        if !(self.duration > 0.0 && self.duration.is_finite()) {
            v.push(Violation::new("duration", "must be positive"));
        }
        if !(self.control_dt > 0.0) {
            v.push(Violation::new("control_dt", "must be positive"));
        }
        if !(self.integrator_dt > 0.0) {
            v.push(Violation::new("integrator_dt", "must be positive"));
        } else if self.integrator_dt > self.control_dt {
            v.push(Violation::new("integrator_dt", "must not exceed control_dt"));
        } else {
            let ratio = self.control_dt / self.integrator_dt;
            if (ratio - ratio.round()).abs() > 1e-9 * ratio {
                v.push(Violation::new("integrator_dt", "control_dt must be a whole multiple of integrator_dt"));
            }
        }
        if !(self.tau_ext_noise >= 0.0 && self.tau_ext_noise.is_finite()) {
            v.push(Violation::new("tau_ext_noise", "must be non-negative"));
        }

        if self.tasks.is_empty() {
            v.push(Violation::new("tasks", "at least one task is required"));
        }
        let mut tasks = Vec::new();
        for (i, t) in self.tasks.iter().enumerate() {
            if let Some(spec) = self.build_task(i, t, &model, &q0, v) {
                tasks.push(spec);
            }
        }
        tasks.sort_by_key(|t| t.priority);
        for w in tasks.windows(2) {
            if w[0].priority == w[1].priority {
                v.push(Violation::new("tasks", format!("priority {} used twice", w[0].priority)));
            }
        }
        if let Some(s) = solver {
            if self.tasks.len() > 1 && !s.supports_multiple_tasks() {
                v.push(Violation::new("solver", format!("`{s}` handles a single task; use dcts for task hierarchies")));
            }
        }

        let limits = self.limits.as_ref().and_then(|l| {
            let a_max = l.a_max.vector(n);
            let a_min = match &l.a_min {
                Some(g) => g.vector(n),
                None => a_max.as_ref().map(|a| -a),
            };
            if a_max.is_none() {
                v.push(Violation::new("limits.a_max", format!("expected a scalar or {n} entries")));
            }
            if a_min.is_none() {
                v.push(Violation::new("limits.a_min", format!("expected a scalar or {n} entries")));
            }
            if !(l.margin >= 0.0 && l.margin < 0.5) {
                v.push(Violation::new("limits.margin", "must be in [0, 0.5)"));
            }
            let shrink = |x: &DVector<f64>, toward_zero: f64| x.map(|x| x - toward_zero * l.margin * x.abs());
            let set = LimitSet {
                c_min: shrink(&model.limits.q_min, -1.0),
                c_max: shrink(&model.limits.q_max, 1.0),
                v_min: shrink(&model.limits.v_min, -1.0),
                v_max: shrink(&model.limits.v_max, 1.0),
                a_min: a_min?,
                a_max: a_max?,
                dt: self.control_dt,
                brake_accel: l.brake_accel,
            };
            for e in set.violations() {
                v.push(Violation::new(format!("limits.{}", e.field), e.message));
            }
            Some(set)
        });

        for (i, e) in self.events.iter().enumerate() {
            let field = |f: &str| format!("events[{i}].{f}");
            if !(e.start >= 0.0 && e.start.is_finite()) {
                v.push(Violation::new(field("start"), "must be non-negative"));
            }
            if let Some(d) = e.duration {
                if !(d > 0.0 && d.is_finite()) {
                    v.push(Violation::new(field("duration"), "must be positive"));
                }
                if e.start + d > self.duration + 1e-12 {
                    report.warnings.push(format!("events[{i}] ends at {} s, after the scenario duration {} s", e.start + d, self.duration));
                }
            }
            if e.start >= self.duration {
                report.warnings.push(format!("events[{i}] starts at {} s, not before the scenario duration {} s", e.start, self.duration));
            }
            match &e.kind {
                EventKind::CartesianForce { frame, force, .. } => {
                    if frame.is_some_and(|f| f >= model.frame_count()) {
                        v.push(Violation::new(field("frame"), "frame out of range"));
                    }
                    if force.iter().any(|x| !x.is_finite()) {
                        v.push(Violation::new(field("force"), "must be finite"));
                    }
                }
                EventKind::JointTorque { torque, .. } => {
                    if torque.len() != n {
                        v.push(Violation::new(field("torque"), format!("expected {n} entries, got {}", torque.len())));
                    }
                }
                EventKind::UnmodeledMass { mass, frame, .. } => {
                    if !(*mass > 0.0 && mass.is_finite()) {
                        v.push(Violation::new(field("mass"), "must be positive"));
                    }
                    if frame.is_some_and(|f| f >= model.frame_count()) {
                        v.push(Violation::new(field("frame"), "frame out of range"));
                    }
                }
            }
        }

        if !report.violations.is_empty() {
            return (None, report);
        }
        let scenario = Scenario {
            file: self.clone(),
            model,
            solver: solver.expect("checked"),
            q0,
            qd0,
            tasks,
            limits,
            warnings: report.warnings.clone(),
        };
        (Some(scenario), report)
    }
}

impl Scenario {
    /// Load, validate and resolve a scenario file.
    pub fn load(path: impl AsRef<Path>) -> Result<Scenario> {
        let path = path.as_ref();
        let file = ScenarioFile::load(path)?;
        Self::from_file(file, path.parent(), &path.display().to_string())
    }

    pub fn from_file(file: ScenarioFile, base: Option<&Path>, origin: &str) -> Result<Scenario> {
        match file.resolve(base) {
            (Some(s), _) => Ok(s),
            (None, report) => Err(Error::Invalid {
                path: origin.to_string(),
                violations: report.violations,
            }),
        }
    }

    /// One of the bundled scenarios by name (with or without `.json`).
    pub fn bundled(name: &str) -> Result<Scenario> {
        let key = name.trim_end_matches(".json");
        let (file, text) = BUNDLED_SCENARIOS
            .iter()
            .find(|(f, _)| f.trim_end_matches(".json") == key)
            .ok_or_else(|| Error::InvalidProblem(format!("no bundled scenario named `{name}`")))?;
        let parsed = ScenarioFile::from_json_str(text, file)?;
        Self::from_file(parsed, None, file)
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    /// The same scenario driven by another controller.
    pub fn with_solver(&self, solver: SolverKind) -> Result<Scenario> {
        if self.tasks.len() > 1 && !solver.supports_multiple_tasks() {
            return Err(Error::InvalidProblem(format!("`{solver}` handles a single task")));
        }
        let mut s = self.clone();
        s.solver = solver;
        s.file.solver = solver.name().to_string();
        Ok(s)
    }
}
