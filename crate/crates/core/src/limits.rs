//! Per-tick acceleration bounds from position/velocity/acceleration limits in a limited space.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::rbd::RobotModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSource {
    Position,
    Velocity,
    Acceleration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitSet {
    pub c_min: DVector<f64>,
    pub c_max: DVector<f64>,
    pub v_min: DVector<f64>,
    pub v_max: DVector<f64>,
    pub a_min: DVector<f64>,
    pub a_max: DVector<f64>,
    /// Control period [s].
    pub dt: f64,
    /// Optional braking deceleration [units/s²]. When set, the admissible velocity towards a
    /// position bound is additionally capped so that the remaining distance can still be covered
    /// while braking at `brake` in steps of `dt` (the discrete form of `sqrt(2·brake·distance)`),
    /// so the bound is approached with a deceleration no larger than `brake` instead of a
    /// one-tick stop.
    pub brake_accel: Option<f64>,
}

impl LimitSet {
    /// Joint-space limits of `model` with the given acceleration bounds.
    pub fn joint_space(model: &RobotModel, a_min: DVector<f64>, a_max: DVector<f64>, dt: f64) -> Result<Self> {
        let l = &model.limits;
        let set = Self {
            c_min: l.q_min.clone(),
            c_max: l.q_max.clone(),
            v_min: l.v_min.clone(),
            v_max: l.v_max.clone(),
            a_min,
            a_max,
            dt,
            brake_accel: None,
        };
        set.check()?;
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.c_min.len()
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let l = self.dim();
        for (name, v) in [
            ("c_max", &self.c_max),
            ("v_min", &self.v_min),
            ("v_max", &self.v_max),
            ("a_min", &self.a_min),
            ("a_max", &self.a_max),
        ] {
            if v.len() != l {
                out.push(Violation::new(name, format!("expected {l} entries, got {}", v.len())));
            }
        }
        if !out.is_empty() {
            return out;
        }
        for i in 0..l {
            let pairs = [
                ("c", self.c_min[i], self.c_max[i]),
                ("v", self.v_min[i], self.v_max[i]),
                ("a", self.a_min[i], self.a_max[i]),
            ];
            for (name, lo, hi) in pairs {
                if !(lo.is_finite() && hi.is_finite()) {
                    out.push(Violation::new(format!("{name}_min[{i}]"), "bounds must be finite"));
                } else if lo >= hi {
                    out.push(Violation::new(
                        format!("{name}_min[{i}]"),
                        format!("min {lo} must be below max {hi}"),
                    ));
                }
            }
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            out.push(Violation::new("dt", "control period must be positive"));
        }
        if let Some(b) = self.brake_accel {
            if !(b.is_finite() && b > 0.0) {
                out.push(Violation::new("brake_accel", "must be positive"));
            }
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid {
                path: "limits".into(),
                violations: v,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapedBounds {
    pub acc_min: DVector<f64>,
    pub acc_max: DVector<f64>,
    pub source_min: Vec<BoundSource>,
    pub source_max: Vec<BoundSource>,
    /// Directions whose raw bounds crossed and were collapsed to the midpoint.
    pub repaired: Vec<bool>,
}

impl ShapedBounds {
    pub fn any_repaired(&self) -> bool {
        self.repaired.iter().any(|&r| r)
    }
}

fn pick(candidates: [(f64, BoundSource); 3], upper: bool) -> (f64, BoundSource) {
    let mut best = candidates[0];
    for c in &candidates[1..] {
        let better = if upper { c.0 < best.0 } else { c.0 > best.0 };
        if better {
            best = *c;
        }
    }
    best
}

/// Largest next-step velocity `v` from the current velocity `v0` (towards the bound) such that
/// the step (constant acceleration, travel `(v0 + v)·dt/2`) followed by braking at `b` (travel
/// `v²/(2b)`) stays within `distance`. Braking at `b` from there keeps the next step admissible.
fn braking_velocity(b: f64, dt: f64, distance: f64, v0: f64) -> f64 {
    let d = (distance - 0.5 * v0 * dt).max(0.0);
    b * (-0.5 * dt + (0.25 * dt * dt + 2.0 * d / b).sqrt())
}

/// Shape position, velocity and acceleration limits into one pair of acceleration bounds:
/// `acc_max = min(a_max, (v_max − ċ)/dt, 2(c_max − c − ċ·dt)/dt²)`, mirrored for `acc_min`.
pub fn shape_acceleration_bounds(limits: &LimitSet, c: &DVector<f64>, cd: &DVector<f64>) -> Result<ShapedBounds> {
    let l = limits.dim();
    for (what, v) in [("c", c), ("cd", cd)] {
        if v.len() != l {
            return Err(Error::Dimension {
                what,
                expected: l,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(what));
        }
    }
    let dt = limits.dt;
    let mut acc_min = DVector::zeros(l);
    let mut acc_max = DVector::zeros(l);
    let mut source_min = Vec::with_capacity(l);
    let mut source_max = Vec::with_capacity(l);
    let mut repaired = vec![false; l];
    for i in 0..l {
        let mut v_hi = limits.v_max[i];
        let mut v_lo = limits.v_min[i];
        if let Some(b) = limits.brake_accel {
            v_hi = v_hi.min(braking_velocity(b, dt, limits.c_max[i] - c[i], cd[i]));
            v_lo = v_lo.max(-braking_velocity(b, dt, c[i] - limits.c_min[i], -cd[i]));
        }
        let (hi, src_hi) = pick(
            [
                (limits.a_max[i], BoundSource::Acceleration),
                ((v_hi - cd[i]) / dt, BoundSource::Velocity),
                (2.0 * (limits.c_max[i] - c[i] - cd[i] * dt) / (dt * dt), BoundSource::Position),
            ],
            true,
        );
        let (lo, src_lo) = pick(
            [
                (limits.a_min[i], BoundSource::Acceleration),
                ((v_lo - cd[i]) / dt, BoundSource::Velocity),
                (2.0 * (limits.c_min[i] - c[i] - cd[i] * dt) / (dt * dt), BoundSource::Position),
            ],
            false,
        );
        if lo > hi {
            let mid = 0.5 * (lo + hi);
            acc_min[i] = mid;
            acc_max[i] = mid;
            repaired[i] = true;
        } else {
            acc_min[i] = lo;
            acc_max[i] = hi;
        }
        source_min.push(src_lo);
        source_max.push(src_hi);
    }
    Ok(ShapedBounds {
        acc_min,
        acc_max,
        source_min,
        source_max,
        repaired,
    })
}

/// Shift both bounds by `−J_c·M⁻¹τ_ext`.
pub fn apply_external_offset(bounds: &ShapedBounds, jc: &DMatrix<f64>, minv_tau_ext: &DVector<f64>) -> Result<ShapedBounds> {
    if jc.nrows() != bounds.acc_min.len() {
        return Err(Error::Dimension {
            what: "limited-space Jacobian rows",
            expected: bounds.acc_min.len(),
            got: jc.nrows(),
        });
    }
    if jc.ncols() != minv_tau_ext.len() {
        return Err(Error::Dimension {
            what: "M⁻¹τ_ext",
            expected: jc.ncols(),
            got: minv_tau_ext.len(),
        });
    }
    let shift = jc * minv_tau_ext;
    let mut out = bounds.clone();
    out.acc_min -= &shift;
    out.acc_max -= &shift;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn set(l: usize) -> LimitSet {
        let c = |v: f64| DVector::from_element(l, v);
        LimitSet {
            c_min: c(-2.0),
            c_max: c(2.0),
            v_min: c(-1.5),
            v_max: c(1.5),
            a_min: c(-10.0),
            a_max: c(10.0),
            dt: 1e-3,
            brake_accel: None,
        }
    }

    #[test]
    fn far_from_bounds_gives_raw_acceleration_limits() {
        let s = set(3);
        let b = shape_acceleration_bounds(&s, &DVector::zeros(3), &DVector::zeros(3)).unwrap();
        assert_eq!(b.acc_min, s.a_min);
        assert_eq!(b.acc_max, s.a_max);
        assert!(b.source_max.iter().all(|&x| x == BoundSource::Acceleration));
        assert!(!b.any_repaired());
    }

    #[test]
    fn at_velocity_limit_no_speed_up() {
        let s = set(1);
        let b = shape_acceleration_bounds(&s, &DVector::zeros(1), &DVector::from_element(1, 1.5)).unwrap();
        assert!(b.acc_max[0] <= 0.0);
        assert_eq!(b.source_max[0], BoundSource::Velocity);
    }

    #[test]
    fn at_position_limit_forces_braking() {
        let mut s = set(1);
        s.v_max[0] = 10.0;
        s.a_min[0] = -1e4;
        let cd = 0.5;
        let b = shape_acceleration_bounds(&s, &DVector::from_element(1, 2.0), &DVector::from_element(1, cd)).unwrap();
        let expected = 2.0 * (-cd * s.dt) / (s.dt * s.dt);
        assert_eq!(b.source_max[0], BoundSource::Position);
        assert!(!b.repaired[0]);
        assert!((b.acc_max[0] - expected).abs() < 1e-9);
        assert!(b.acc_max[0] < 0.0);
        let next = 2.0 + cd * s.dt + 0.5 * b.acc_max[0] * s.dt * s.dt;
        assert!(next <= 2.0 + 1e-12);
    }

    #[test]
    fn crossed_bounds_are_repaired_to_midpoint() {
        let s = set(1);
        // Beyond the upper velocity bound and moving fast: both velocity and acceleration terms conflict.
        let b = shape_acceleration_bounds(&s, &DVector::zeros(1), &DVector::from_element(1, 2.0)).unwrap();
        assert!(b.repaired[0]);
        assert_eq!(b.acc_min[0], b.acc_max[0]);
        let expected = 0.5 * (-10.0 + (1.5 - 2.0) / 1e-3);
        assert!((b.acc_max[0] - expected).abs() < 1e-9);
    }

    #[test]
    fn braking_caps_velocity_near_position_bound() {
        let mut s = set(1);
        s.brake_accel = Some(5.0);
        let c = DVector::from_element(1, 2.0 - 0.001);
        let b = shape_acceleration_bounds(&s, &c, &DVector::from_element(1, 0.095)).unwrap();
        let v_cap = braking_velocity(5.0, 1e-3, 0.001, 0.095);
        assert!(v_cap < (2.0 * 5.0 * 0.001f64).sqrt());
        assert_eq!(b.source_max[0], BoundSource::Velocity);
        assert!((b.acc_max[0] - (v_cap - 0.095) / s.dt).abs() < 1e-9);
    }

    /// Driving a double integrator at the upper shaped bound: the bound is approached without
    /// ever asking for more deceleration than `brake`, and never crossed.
    #[test]
    fn braking_approach_needs_at_most_brake() {
        let mut s = set(1);
        s.brake_accel = Some(5.0);
        s.v_max[0] = 10.0;
        s.a_max[0] = 10.0;
        s.a_min[0] = -10.0;
        let mut c = DVector::from_element(1, -1.0);
        let mut cd = DVector::zeros(1);
        for _ in 0..5000 {
            let b = shape_acceleration_bounds(&s, &c, &cd).unwrap();
            assert!(!b.repaired[0], "c {} cd {} {:?}", c[0], cd[0], b);
            assert!(b.acc_max[0] >= -5.0 * (1.0 + 1e-9), "{}", b.acc_max[0]);
            let a = b.acc_max[0];
            c[0] += cd[0] * s.dt + 0.5 * a * s.dt * s.dt;
            cd[0] += a * s.dt;
            assert!(c[0] <= s.c_max[0] + 1e-12);
        }
        assert!(s.c_max[0] - c[0] < 1e-3);
    }

    #[test]
    fn zero_offset_is_identity_and_identity_map_shifts() {
        let s = set(2);
        let b = shape_acceleration_bounds(&s, &DVector::zeros(2), &DVector::zeros(2)).unwrap();
        let jc = DMatrix::identity(2, 2);
        assert_eq!(apply_external_offset(&b, &jc, &DVector::zeros(2)).unwrap(), b);
        let a = DVector::from_vec(vec![1.0, -3.0]);
        let o = apply_external_offset(&b, &jc, &a).unwrap();
        assert_eq!(o.acc_min, &b.acc_min - &a);
        assert_eq!(o.acc_max, &b.acc_max - &a);
    }

    #[test]
    fn dimension_errors() {
        let s = set(2);
        assert!(shape_acceleration_bounds(&s, &DVector::zeros(3), &DVector::zeros(2)).is_err());
        let b = shape_acceleration_bounds(&s, &DVector::zeros(2), &DVector::zeros(2)).unwrap();
        assert!(apply_external_offset(&b, &DMatrix::zeros(2, 3), &DVector::zeros(2)).is_err());
    }

    #[test]
    fn violations_name_fields() {
        let mut s = set(2);
        s.c_min[1] = 3.0;
        s.dt = 0.0;
        let v = s.violations();
        assert!(v.iter().any(|x| x.field == "c_min[1]"));
        assert!(v.iter().any(|x| x.field == "dt"));
    }

    #[test]
    fn one_step_safety_sweep() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let s = set(1);
        let dt = s.dt;
        for _ in 0..100_000 {
            let c = rng.random_range(-2.0..=2.0);
            let cd = rng.random_range(-1.5..=1.5);
            let b = shape_acceleration_bounds(&s, &DVector::from_element(1, c), &DVector::from_element(1, cd)).unwrap();
            // Repaired directions are outside the invariant's domain by construction.
            if b.repaired[0] {
                continue;
            }
            let u: f64 = rng.random();
            let a = b.acc_min[0] + u * (b.acc_max[0] - b.acc_min[0]);
            for acc in [a, b.acc_min[0], b.acc_max[0]] {
                let c1 = c + cd * dt + 0.5 * acc * dt * dt;
                let cd1 = cd + acc * dt;
                assert!((-2.0 - 1e-12..=2.0 + 1e-12).contains(&c1), "c={c} cd={cd} a={acc} -> {c1}");
                let slack = 10.0 * dt + 1e-12;
                assert!(cd1 <= 1.5 + slack && cd1 >= -1.5 - slack);
            }
        }
    }

    proptest! {
        #[test]
        fn offset_is_linear(x in prop::collection::vec(-5.0f64..5.0, 3),
                            y in prop::collection::vec(-5.0f64..5.0, 3),
                            jv in prop::collection::vec(-2.0f64..2.0, 6)) {
            let s = set(2);
            let b = shape_acceleration_bounds(&s, &DVector::zeros(2), &DVector::zeros(2)).unwrap();
            let jc = DMatrix::from_vec(2, 3, jv);
            let x = DVector::from_vec(x);
            let y = DVector::from_vec(y);
            let once = apply_external_offset(&b, &jc, &(&x + &y)).unwrap();
            let twice = apply_external_offset(&apply_external_offset(&b, &jc, &x).unwrap(), &jc, &y).unwrap();
            prop_assert!((once.acc_min - twice.acc_min).amax() < 1e-9);
            prop_assert!((once.acc_max - twice.acc_max).amax() < 1e-9);
        }
    }
}
