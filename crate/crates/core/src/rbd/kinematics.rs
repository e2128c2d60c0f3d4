use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};

use super::model::RobotModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FramePose {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

/// World-frame placement of every joint for one configuration.
#[derive(Debug, Clone)]
pub struct ChainPlacement {
    /// Rotation of each link frame (joint rotation applied).
    pub rotations: Vec<Matrix3<f64>>,
    /// Origin of each joint (shared by the link frame it moves).
    pub origins: Vec<Vector3<f64>>,
    /// World-frame joint axes.
    pub axes: Vec<Vector3<f64>>,
}

/// Rodrigues rotation about a unit axis.
pub fn axis_rotation(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = axis.cross_matrix();
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

pub(crate) fn check_dim(what: &'static str, v: &DVector<f64>, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension {
            what,
            expected: n,
            got: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

impl RobotModel {
    pub fn placement(&self, q: &DVector<f64>) -> Result<ChainPlacement> {
        let n = self.dof();
        check_dim("q", q, n)?;
        let mut rotations = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n);
        let mut axes = Vec::with_capacity(n);
        let mut r = Matrix3::identity();
        let mut p = Vector3::zeros();
        for (i, joint) in self.joints.iter().enumerate() {
            p += r * joint.origin_translation;
            let r_zero = r * joint.origin_rotation;
            axes.push(r_zero * joint.axis);
            r = r_zero * axis_rotation(&joint.axis, q[i]);
            rotations.push(r);
            origins.push(p);
        }
        Ok(ChainPlacement {
            rotations,
            origins,
            axes,
        })
    }

    /// Link that carries `frame`, plus the frame's own offset/rotation in that link.
    fn frame_link(&self, frame: usize) -> Result<(usize, Vector3<f64>, Matrix3<f64>)> {
        let n = self.dof();
        if frame < n {
            Ok((frame, Vector3::zeros(), Matrix3::identity()))
        } else if frame == n {
            Ok((n - 1, self.tool.translation, self.tool.rotation))
        } else {
            Err(Error::InvalidFrame {
                index: frame,
                frames: self.frame_count(),
            })
        }
    }

    pub fn forward_kinematics(&self, q: &DVector<f64>, frame: usize) -> Result<FramePose> {
        let (link, offset, rot) = self.frame_link(frame)?;
        let pl = self.placement(q)?;
        Ok(FramePose {
            position: pl.origins[link] + pl.rotations[link] * offset,
            rotation: pl.rotations[link] * rot,
        })
    }

    /// World position of `point` given in the coordinates of `frame`.
    pub fn point_position(&self, q: &DVector<f64>, frame: usize, point: &Vector3<f64>) -> Result<Vector3<f64>> {
        let pose = self.forward_kinematics(q, frame)?;
        Ok(pose.position + pose.rotation * point)
    }

    /// Geometric 6×n Jacobian of `point` (in `frame` coordinates): linear rows 0..3, angular rows 3..6.
    pub fn jacobian(&self, q: &DVector<f64>, frame: usize, point: &Vector3<f64>) -> Result<DMatrix<f64>> {
        let (link, offset, rot) = self.frame_link(frame)?;
        let pl = self.placement(q)?;
        let p = pl.origins[link] + pl.rotations[link] * (offset + rot * point);
        let mut jac = DMatrix::zeros(6, self.dof());
        for j in 0..=link {
            let z = pl.axes[j];
            let lin = z.cross(&(p - pl.origins[j]));
            for k in 0..3 {
                jac[(k, j)] = lin[k];
                jac[(k + 3, j)] = z[k];
            }
        }
        Ok(jac)
    }

    /// Drift acceleration `J̇ q̇` of `point`, from recursive velocity propagation with zero joint acceleration.
    pub fn jacobian_dot_qd(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        frame: usize,
        point: &Vector3<f64>,
    ) -> Result<Vector6<f64>> {
        check_dim("qd", qd, self.dof())?;
        let (link, offset, rot) = self.frame_link(frame)?;
        let pl = self.placement(q)?;
        let mut omega = Vector3::zeros();
        let mut omega_dot = Vector3::zeros();
        let mut acc = Vector3::zeros();
        let mut prev_origin = Vector3::zeros();
        for j in 0..=link {
            let r = pl.origins[j] - prev_origin;
            acc += omega_dot.cross(&r) + omega.cross(&omega.cross(&r));
            let spin = pl.axes[j] * qd[j];
            omega_dot += omega.cross(&spin);
            omega += spin;
            prev_origin = pl.origins[j];
        }
        let p = pl.origins[link] + pl.rotations[link] * (offset + rot * point);
        let r = p - prev_origin;
        acc += omega_dot.cross(&r) + omega.cross(&omega.cross(&r));
        Ok(Vector6::new(
            acc[0],
            acc[1],
            acc[2],
            omega_dot[0],
            omega_dot[1],
            omega_dot[2],
        ))
    }
}

/// Axis-angle vector `θ·k` of a rotation matrix.
pub fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    rot.scaled_axis()
}
