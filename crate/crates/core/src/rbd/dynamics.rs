use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix3, Vector3};

use super::kinematics::{check_dim, ChainPlacement};
use super::model::RobotModel;
use crate::error::{Error, Result};

/// World-frame mass properties of one link for a given placement.
struct WorldBody {
    mass: f64,
    com: Vector3<f64>,
    inertia: Matrix3<f64>,
}

impl RobotModel {
    fn world_bodies(&self, pl: &ChainPlacement) -> Vec<WorldBody> {
        self.links
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let r = pl.rotations[i];
                WorldBody {
                    mass: l.mass,
                    com: pl.origins[i] + r * l.com,
                    inertia: r * l.inertia * r.transpose(),
                }
            })
            .collect()
    }

    /// Recursive Newton-Euler: `τ = M(q) q̈ + ν(q, q̇) + g(q)`.
    pub fn inverse_dynamics(&self, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>) -> Result<DVector<f64>> {
        self.rnea(q, qd, qdd, true)
    }

    fn rnea(&self, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>, with_gravity: bool) -> Result<DVector<f64>> {
        let n = self.dof();
        check_dim("qd", qd, n)?;
        check_dim("qdd", qdd, n)?;
        let pl = self.placement(q)?;
        let bodies = self.world_bodies(&pl);

        let mut omega = Vector3::zeros();
        let mut omega_dot = Vector3::zeros();
        let mut acc = if with_gravity { -self.gravity } else { Vector3::zeros() };
        let mut prev = Vector3::zeros();
        let mut force = Vec::with_capacity(n);
        let mut moment = Vec::with_capacity(n);
        for i in 0..n {
            let r = pl.origins[i] - prev;
            acc += omega_dot.cross(&r) + omega.cross(&omega.cross(&r));
            let z = pl.axes[i];
            omega_dot += z * qdd[i] + omega.cross(&(z * qd[i]));
            omega += z * qd[i];
            prev = pl.origins[i];

            let b = &bodies[i];
            let rc = b.com - pl.origins[i];
            let acc_com = acc + omega_dot.cross(&rc) + omega.cross(&omega.cross(&rc));
            force.push(b.mass * acc_com);
            moment.push(b.inertia * omega_dot + omega.cross(&(b.inertia * omega)));
        }

        let mut tau = DVector::zeros(n);
        let mut f_child = Vector3::zeros();
        let mut n_child = Vector3::zeros();
        for i in (0..n).rev() {
            let rc = bodies[i].com - pl.origins[i];
            let arm = if i + 1 < n {
                pl.origins[i + 1] - pl.origins[i]
            } else {
                Vector3::zeros()
            };
            let f = force[i] + f_child;
            let m = moment[i] + n_child + rc.cross(&force[i]) + arm.cross(&f_child);
            tau[i] = pl.axes[i].dot(&m);
            f_child = f;
            n_child = m;
        }
        Ok(tau)
    }

    /// Joint-space inertia from composite rigid bodies.
    pub fn mass_matrix(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.dof();
        let pl = self.placement(q)?;
        let bodies = self.world_bodies(&pl);
        let mut mass = DMatrix::zeros(n, n);

        // Composite of links j..n, accumulated from the tip.
        let mut c_mass = 0.0;
        let mut c_first = Vector3::zeros();
        let mut c_second = Matrix3::zeros();
        for j in (0..n).rev() {
            let b = &bodies[j];
            c_mass += b.mass;
            c_first += b.com * b.mass;
            // Inertia about the world origin.
            c_second += b.inertia + b.mass * (Matrix3::identity() * b.com.dot(&b.com) - b.com * b.com.transpose());

            let com = c_first / c_mass;
            let about_com = c_second - c_mass * (Matrix3::identity() * com.dot(&com) - com * com.transpose());
            let zj = pl.axes[j];
            let lin = c_mass * zj.cross(&(com - pl.origins[j]));
            let ang_com = about_com * zj;
            for i in 0..=j {
                let moment = ang_com + (com - pl.origins[i]).cross(&lin);
                let v = pl.axes[i].dot(&moment);
                mass[(i, j)] = v;
                mass[(j, i)] = v;
            }
        }
        Ok(mass)
    }

    /// Coriolis and centrifugal torques, gravity excluded.
    pub fn bias_forces(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DVector<f64>> {
        self.rnea(q, qd, &DVector::zeros(self.dof()), false)
    }

    /// Static torques that hold the chain against gravity.
    pub fn gravity_forces(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.dof();
        let pl = self.placement(q)?;
        let bodies = self.world_bodies(&pl);
        let mut tau = DVector::zeros(n);
        let mut weight = Vector3::zeros();
        let mut weighted_com = Vector3::zeros();
        for j in (0..n).rev() {
            weight += -self.gravity * bodies[j].mass;
            weighted_com += bodies[j].com * bodies[j].mass;
            let total_mass: f64 = bodies[j..].iter().map(|b| b.mass).sum();
            let com = weighted_com / total_mass;
            tau[j] = pl.axes[j].dot(&(com - pl.origins[j]).cross(&weight));
        }
        Ok(tau)
    }

    /// Gravitational potential energy `−Σ mᵢ gᵀ cᵢ`, zero at the base height.
    pub fn potential_energy(&self, q: &DVector<f64>) -> Result<f64> {
        let pl = self.placement(q)?;
        Ok(self.world_bodies(&pl).iter().map(|b| -b.mass * self.gravity.dot(&b.com)).sum())
    }
}

/// Cholesky factor of a mass matrix, with dimension and positivity checks.
pub fn mass_cholesky(mass: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if mass.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mass matrix"));
    }
    Cholesky::new(mass.clone()).ok_or(Error::MassMatrixNotPd)
}
