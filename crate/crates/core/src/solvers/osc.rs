use nalgebra::{DMatrix, DVector};

use super::{ControlOutput, Diagnostics, SolverConfig, SolverStatus, TickContext};
use crate::error::{Error, Result};
use crate::limits::ShapedBounds;
use crate::rbd::task_dynamics_with;
use crate::tasks::TaskEval;

/// Elementwise clamp; also returns the clamped joint indices.
pub fn naive_saturate(tau: &DVector<f64>, tau_min: &DVector<f64>, tau_max: &DVector<f64>) -> (DVector<f64>, Vec<usize>) {
    let mut out = tau.clone();
    let mut clamped = Vec::new();
    for j in 0..tau.len() {
        if tau[j] > tau_max[j] {
            out[j] = tau_max[j];
            clamped.push(j);
        } else if tau[j] < tau_min[j] {
            out[j] = tau_min[j];
            clamped.push(j);
        }
    }
    (out, clamped)
}

/// `τ = JᵀΛ(ẍ_d − J̇q̇ − J M⁻¹τ_ext) + ν + g` with the regularized task inertia.
pub fn solve_osc(ctx: &TickContext, task: &TaskEval, cfg: &SolverConfig) -> Result<ControlOutput> {
    ctx.check_task(task)?;
    let (bundle, status) = match task_dynamics_with(&ctx.chol, &task.jacobian, cfg.epsilon_lambda) {
        Ok(b) => (b, SolverStatus::Optimal),
        Err(Error::SingularTask) => (
            task_dynamics_with(&ctx.chol, &task.jacobian, cfg.epsilon_lambda.max(1e-6))?,
            SolverStatus::Degraded,
        ),
        Err(e) => return Err(e),
    };
    let rhs = &task.xdd_d - ctx.task_offset(task, cfg);
    let tau_p = task.jacobian.transpose() * (&bundle.lambda * rhs);
    let qdd = ctx.chol.solve(&tau_p);
    Ok(ControlOutput {
        tau: tau_p + ctx.compensation(),
        qdd,
        s: vec![1.0],
        status,
        diagnostics: Diagnostics::default(),
    })
}

/// `min ½q̈ᵀMq̈  s.t.  J q̈ = r,  q̈_j = c_j (j ∈ S)`, returned as the affine map in the
/// task-scaling factor: `q̈(s) = q0 + s·q1` for `r = s·ẍ_d − b`.
fn restricted_solution(
    mass: &DMatrix<f64>,
    j: &DMatrix<f64>,
    xdd: &DVector<f64>,
    b: &DVector<f64>,
    sat: &[(usize, f64)],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = mass.nrows();
    let m = j.nrows();
    let k = sat.len();
    let size = n + m + k;
    let mut kkt = DMatrix::zeros(size, size);
    kkt.view_mut((0, 0), (n, n)).copy_from(mass);
    kkt.view_mut((0, n), (n, m)).copy_from(&j.transpose());
    kkt.view_mut((n, 0), (m, n)).copy_from(j);
    let mut rhs0 = DVector::zeros(size);
    let mut rhs1 = DVector::zeros(size);
    rhs0.rows_mut(n, m).copy_from(&(-b));
    rhs1.rows_mut(n, m).copy_from(xdd);
    for (i, &(jnt, val)) in sat.iter().enumerate() {
        kkt[(jnt, n + m + i)] = 1.0;
        kkt[(n + m + i, jnt)] = 1.0;
        rhs0[n + m + i] = val;
    }
    let lu = kkt.clone().lu();
    let x0 = lu.solve(&rhs0)?;
    let x1 = lu.solve(&rhs1)?;
    let bad = |x: &DVector<f64>| x.iter().any(|v| !v.is_finite());
    if bad(&x0) || bad(&x1) {
        return None;
    }
    // Rank-deficient stacks show up as huge, inconsistent solutions.
    let res0 = (&kkt * &x0 - &rhs0).amax();
    let res1 = (&kkt * &x1 - &rhs1).amax();
    if res0 > 1e-8 * (1.0 + rhs0.amax()) || res1 > 1e-8 * (1.0 + rhs1.amax()) {
        return None;
    }
    Some((x0.rows(0, n).clone_owned(), x1.rows(0, n).clone_owned()))
}

/// Largest `s ∈ [0, 1]` keeping `q0 + s·q1` inside the bounds on the free joints, if any.
fn feasible_scale(q0: &DVector<f64>, q1: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>, free: &[bool]) -> Option<f64> {
    let mut s_lo: f64 = 0.0;
    let mut s_hi: f64 = 1.0;
    let eps = 1e-12;
    for j in 0..q0.len() {
        if !free[j] {
            continue;
        }
        // lo ≤ q0 + s q1 ≤ hi
        for (bound, upper) in [(hi[j], true), (lo[j], false)] {
            let a = q1[j];
            let c = bound - q0[j];
            // upper: a s ≤ c ; lower: a s ≥ c
            let (a, c) = if upper { (a, c) } else { (-a, -c) };
            if a.abs() < 1e-15 {
                if c < -eps * (1.0 + bound.abs()) {
                    return None;
                }
            } else if a > 0.0 {
                s_hi = s_hi.min(c / a);
            } else {
                s_lo = s_lo.max(c / a);
            }
        }
    }
    (s_hi >= s_lo).then_some(s_hi)
}

/// Projector-based controller: OSC whose joint-space acceleration bounds are enforced by
/// saturating joints in the null space (with task scaling when needed), followed by naive
/// torque clamping. Without active bounds it is exactly [`solve_osc`].
pub fn solve_projector_osc(
    ctx: &TickContext,
    task: &TaskEval,
    bounds: Option<&ShapedBounds>,
    cfg: &SolverConfig,
) -> Result<ControlOutput> {
    ctx.check_task(task)?;
    let limits = &ctx.model.limits;
    let base = solve_osc(ctx, task, cfg)?;
    let Some(bounds) = bounds else {
        let (tau, clamped) = naive_saturate(&base.tau, &limits.tau_min, &limits.tau_max);
        return Ok(ControlOutput {
            tau,
            diagnostics: Diagnostics {
                torque_clamped: clamped,
                ..Diagnostics::default()
            },
            ..base
        });
    };
    let n = ctx.dof();
    let m = task.jacobian.nrows();
    let b = ctx.task_offset(task, cfg);
    let (lo, hi) = (&bounds.acc_min, &bounds.acc_max);
    let inside = |q: &DVector<f64>| (0..n).all(|j| q[j] >= lo[j] - 1e-12 && q[j] <= hi[j] + 1e-12);

    let mut chosen = (1.0, base.qdd.clone(), Vec::new());
    if !inside(&base.qdd) {
        let mut sat: Vec<(usize, f64)> = Vec::new();
        let mut best: Option<(f64, DVector<f64>, Vec<usize>)> = None;
        while let Some((q0, q1)) = restricted_solution(&ctx.mass, &task.jacobian, &task.xdd_d, &b, &sat) {
            let mut free = vec![true; n];
            for &(j, _) in &sat {
                free[j] = false;
            }
            if let Some(s) = feasible_scale(&q0, &q1, lo, hi, &free) {
                if s >= 1.0 - 1e-12 {
                    best = Some((1.0, &q0 + &q1, sat.iter().map(|x| x.0).collect()));
                    break;
                }
                if best.as_ref().is_none_or(|(bs, _, _)| s > *bs) {
                    best = Some((s, &q0 + &q1 * s, sat.iter().map(|x| x.0).collect()));
                }
            }
            if sat.len() + m >= n {
                break;
            }
            // Saturate the most violating free joint of the full-scale solution.
            let full = &q0 + &q1;
            let mut worst: Option<(usize, f64, f64)> = None;
            for j in 0..n {
                if !free[j] {
                    continue;
                }
                let (v, target) = if full[j] > hi[j] {
                    (full[j] - hi[j], hi[j])
                } else if full[j] < lo[j] {
                    (lo[j] - full[j], lo[j])
                } else {
                    continue;
                };
                if worst.is_none_or(|(_, wv, _)| v > wv) {
                    worst = Some((j, v, target));
                }
            }
            let Some((j, _, target)) = worst else { break };
            sat.push((j, target));
        }
        if let Some(b) = best {
            chosen = b;
        }
    }
    let (s, qdd, null_saturated) = chosen;
    let status = if inside(&qdd) { base.status } else { SolverStatus::Degraded };
    let tau_raw = &ctx.mass * &qdd + ctx.compensation();
    let (tau, clamped) = naive_saturate(&tau_raw, &limits.tau_min, &limits.tau_max);
    Ok(ControlOutput {
        tau,
        qdd,
        s: vec![s],
        status,
        diagnostics: Diagnostics {
            torque_clamped: clamped,
            null_saturated,
            ..Diagnostics::default()
        },
    })
}
