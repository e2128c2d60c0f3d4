//! Robot model description and its JSON file format.
//!
//! A model file lists the revolute joints from base to tip. Each entry holds
//! the fixed transform from the parent joint frame (`origin_xyz` in m,
//! `origin_rpy` in rad, URDF convention `Rz(yaw)·Ry(pitch)·Rx(roll)`), the
//! joint axis in the joint frame, the inertial data of the child link
//! (`mass` in kg, `com` in m, `inertia` about the COM as
//! `[ixx, iyy, izz, ixy, ixz, iyz]` in kg·m²) and the joint limits
//! (`position_limits_deg` in deg, `velocity_limits_deg_s` in deg/s,
//! `torque_limits` in N·m). Limits are converted to radians on load.
//!
//! ```json
//! {
//!   "name": "two-link",
//!   "gravity": [0.0, 0.0, -9.81],
//!   "joints": [
//!     { "name": "j1", "origin_xyz": [0, 0, 0], "axis": [0, 0, 1],
//!       "mass": 1.0, "com": [1, 0, 0], "inertia": [1e-6, 1e-6, 1e-6, 0, 0, 0],
//!       "position_limits_deg": [-170, 170], "velocity_limits_deg_s": [-100, 100],
//!       "torque_limits": [-100, 100] }
//!   ],
//!   "tool": { "xyz": [1, 0, 0] }
//! }
//! ```

use std::path::Path;

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// Position of this joint's origin in the parent frame.
    pub origin_translation: Vector3<f64>,
    /// Fixed rotation from the parent frame to this joint's zero-angle frame.
    pub origin_rotation: Matrix3<f64>,
    /// Unit rotation axis expressed in this joint's frame.
    pub axis: Vector3<f64>,
}

/// Inertial parameters of the link moved by one joint, in that joint's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub mass: f64,
    pub com: Vector3<f64>,
    /// Rotational inertia about the center of mass.
    pub inertia: Matrix3<f64>,
}

impl Link {
    /// Combines two rigid bodies expressed in the same frame.
    pub fn combined(&self, other: &Link) -> Link {
        let mass = self.mass + other.mass;
        let com = (self.com * self.mass + other.com * other.mass) / mass;
        let shift = |l: &Link| {
            let d = l.com - com;
            l.inertia + l.mass * (Matrix3::identity() * d.dot(&d) - d * d.transpose())
        };
        Link {
            mass,
            com,
            inertia: shift(self) + shift(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointLimits {
    pub q_min: DVector<f64>,
    pub q_max: DVector<f64>,
    pub v_min: DVector<f64>,
    pub v_max: DVector<f64>,
    pub tau_min: DVector<f64>,
    pub tau_max: DVector<f64>,
}

/// Tool frame rigidly attached to the last link.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolFrame {
    pub translation: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

/// Fixed-base serial chain of revolute joints. Immutable once built.
///
/// Frames are indexed `0..=n`: frame `i < n` is the frame of link `i`
/// (located at joint `i`), frame `n` is the tool frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub joints: Vec<Joint>,
    pub links: Vec<Link>,
    pub limits: JointLimits,
    pub gravity: Vector3<f64>,
    pub tool: ToolFrame,
}

impl RobotModel {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn tool_frame(&self) -> usize {
        self.joints.len()
    }

    pub fn frame_count(&self) -> usize {
        self.joints.len() + 1
    }

    /// Same model with an extra point mass rigidly attached at `point` of `frame`.
    pub fn with_point_mass(&self, frame: usize, point: Vector3<f64>, mass: f64) -> Result<RobotModel> {
        if frame >= self.frame_count() {
            return Err(Error::InvalidFrame {
                index: frame,
                frames: self.frame_count(),
            });
        }
        let (link, p) = if frame == self.tool_frame() {
            (self.dof() - 1, self.tool.translation + self.tool.rotation * point)
        } else {
            (frame, point)
        };
        let mut out = self.clone();
        let payload = Link {
            mass,
            com: p,
            inertia: Matrix3::zeros(),
        };
        out.links[link] = out.links[link].combined(&payload);
        Ok(out)
    }

    pub fn from_json_str(text: &str, origin: &str) -> Result<RobotModel> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::parse(origin, &e))?;
        file.into_model().map_err(|violations| Error::Invalid {
            path: origin.to_string(),
            violations,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RobotModel> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    /// The bundled 7-DOF model (LBR iiwa 14 kinematics, approximate inertias).
    pub fn bundled_iiwa() -> RobotModel {
        Self::from_json_str(BUNDLED_IIWA, "models/iiwa14.json").expect("bundled model is valid")
    }
}

pub const BUNDLED_IIWA: &str = include_str!("../../models/iiwa14.json");

// ---------------------------------------------------------------------------
// File schema

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub name: String,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    pub joints: Vec<JointEntry>,
    #[serde(default)]
    pub tool: ToolEntry,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointEntry {
    pub name: String,
    pub origin_xyz: [f64; 3],
    #[serde(default)]
    pub origin_rpy: [f64; 3],
    pub axis: [f64; 3],
    pub mass: f64,
    pub com: [f64; 3],
    pub inertia: [f64; 6],
    pub position_limits_deg: [f64; 2],
    pub velocity_limits_deg_s: [f64; 2],
    pub torque_limits: [f64; 2],
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolEntry {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

/// URDF-style fixed-axis roll/pitch/yaw rotation.
pub fn rpy_matrix(rpy: [f64; 3]) -> Matrix3<f64> {
    let [r, p, y] = rpy;
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, r.cos(), -r.sin(), 0.0, r.sin(), r.cos());
    let ry = Matrix3::new(p.cos(), 0.0, p.sin(), 0.0, 1.0, 0.0, -p.sin(), 0.0, p.cos());
    let rz = Matrix3::new(y.cos(), -y.sin(), 0.0, y.sin(), y.cos(), 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl ModelFile {
    /// Checks every invariant and reports all violations at once.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.joints.is_empty() {
            out.push(Violation::new("joints", "model needs at least one joint"));
        }
        if !all_finite(&self.gravity) {
            out.push(Violation::new("gravity", "must be finite"));
        }
        for (i, j) in self.joints.iter().enumerate() {
            let f = |name: &str| format!("joints[{i}].{name}");
            if !all_finite(&j.origin_xyz) {
                out.push(Violation::new(f("origin_xyz"), "must be finite"));
            }
            if !all_finite(&j.origin_rpy) {
                out.push(Violation::new(f("origin_rpy"), "must be finite"));
            }
            let axis_norm = Vector3::from(j.axis).norm();
            if !axis_norm.is_finite() || (axis_norm - 1.0).abs() > 1e-9 {
                out.push(Violation::new(
                    f("axis"),
                    format!("must be a unit vector (norm {axis_norm})"),
                ));
            }
            if !(j.mass > 0.0 && j.mass.is_finite()) {
                out.push(Violation::new(f("mass"), format!("must be > 0 (got {})", j.mass)));
            }
            if !all_finite(&j.com) {
                out.push(Violation::new(f("com"), "must be finite"));
            }
            if !all_finite(&j.inertia) || inertia_matrix(j.inertia).cholesky().is_none() {
                out.push(Violation::new(f("inertia"), "must be symmetric positive definite"));
            }
            for (name, pair) in [
                ("position_limits_deg", j.position_limits_deg),
                ("velocity_limits_deg_s", j.velocity_limits_deg_s),
                ("torque_limits", j.torque_limits),
            ] {
                if !all_finite(&pair) || pair[0] >= pair[1] {
                    out.push(Violation::new(
                        f(name),
                        format!("min must be < max (got [{}, {}])", pair[0], pair[1]),
                    ));
                }
            }
        }
        if !all_finite(&self.tool.xyz) || !all_finite(&self.tool.rpy) {
            out.push(Violation::new("tool", "must be finite"));
        }
        out
    }

    pub fn into_model(self) -> std::result::Result<RobotModel, Vec<Violation>> {
        let violations = self.violations();
        if !violations.is_empty() {
            return Err(violations);
        }
        let n = self.joints.len();
        let col = |f: &dyn Fn(&JointEntry) -> f64| DVector::from_iterator(n, self.joints.iter().map(f));
        let deg = std::f64::consts::PI / 180.0;
        let limits = JointLimits {
            q_min: col(&|j| j.position_limits_deg[0] * deg),
            q_max: col(&|j| j.position_limits_deg[1] * deg),
            v_min: col(&|j| j.velocity_limits_deg_s[0] * deg),
            v_max: col(&|j| j.velocity_limits_deg_s[1] * deg),
            tau_min: col(&|j| j.torque_limits[0]),
            tau_max: col(&|j| j.torque_limits[1]),
        };
        let joints = self
            .joints
            .iter()
            .map(|j| Joint {
                name: j.name.clone(),
                origin_translation: Vector3::from(j.origin_xyz),
                origin_rotation: rpy_matrix(j.origin_rpy),
                axis: Vector3::from(j.axis),
            })
            .collect();
        let links = self
            .joints
            .iter()
            .map(|j| Link {
                mass: j.mass,
                com: Vector3::from(j.com),
                inertia: inertia_matrix(j.inertia),
            })
            .collect();
        Ok(RobotModel {
            name: self.name,
            joints,
            links,
            limits,
            gravity: Vector3::from(self.gravity),
            tool: ToolFrame {
                translation: Vector3::from(self.tool.xyz),
                rotation: rpy_matrix(self.tool.rpy),
            },
        })
    }
}

fn inertia_matrix(i: [f64; 6]) -> Matrix3<f64> {
    let [ixx, iyy, izz, ixy, ixz, iyz] = i;
    Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz)
}
