//! Dynamically consistent task scaling.
//!
//! Each task `i` is a hard equality `J_i q̈ = s_i ẍ_i − J̇_i q̇ − J_i M⁻¹τ_ext` with a scaling factor
//! `s_i ∈ [0, 1]`; the objective `½ q̈ᵀM q̈ + Σ w_i (1 − s_i)²` (constants dropped) keeps the motion
//! dynamically consistent while the torque and acceleration limits stay hard. The dynamics
//! equality `M q̈ = τ − ν − g` is substituted, so the QP runs over `(q̈, s̃)` with `s̃_i = √w_i s_i`
//! to keep the Hessian well scaled.
//!
//! Lower-priority rows are restricted to the directions still reachable in the dynamically
//! consistent null space of the tasks above, which makes the constraint set consistent for any
//! stack of tasks.

use nalgebra::{DMatrix, DVector};

use super::naive_saturate;
use super::qp_baselines::joint_constraints;
use super::{qp_outcome, ControlOutput, Diagnostics, SolverConfig, TickContext};
use crate::error::Result;
use crate::limits::ShapedBounds;
use crate::qp::{self, QpProblem, QpStatus};
use crate::tasks::TaskEval;

/// `I − M⁻¹Jᵀ(J M⁻¹ Jᵀ)⁺ J`; identity for an empty stack.
fn acceleration_null_projector(ctx: &TickContext, stack: &DMatrix<f64>) -> DMatrix<f64> {
    let n = ctx.dof();
    if stack.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let minv_jt = ctx.chol.solve(&stack.transpose());
    let inv_lambda = stack * &minv_jt;
    let scale = inv_lambda.amax().max(f64::MIN_POSITIVE);
    let lambda = inv_lambda
        .pseudo_inverse(1e-12 * scale)
        .unwrap_or_else(|_| DMatrix::zeros(stack.nrows(), stack.nrows()));
    DMatrix::identity(n, n) - minv_jt * lambda * stack
}

/// Orthonormal basis of the column space of `a`, cut at `rank_tol` relative to `σ_max`.
fn range_basis(a: &DMatrix<f64>, rank_tol: f64) -> DMatrix<f64> {
    let m = a.nrows();
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    if !(smax > 1e-12) {
        return DMatrix::zeros(m, 0);
    }
    let cols: Vec<_> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > rank_tol * smax)
        .map(|i| u.column(i).clone_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(m, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// For a level with no direction left: the part of `ẍ_d` realized anyway, in `[0, 1]`.
fn achieved_fraction(task: &TaskEval, qdd: &DVector<f64>, offset: &DVector<f64>) -> f64 {
    let want = &task.xdd_d;
    let got = &task.jacobian * qdd + offset;
    let nn = want.norm_squared();
    if nn <= 1e-24 {
        return if got.amax() <= 1e-9 { 1.0 } else { 0.0 };
    }
    (got.dot(want) / nn).clamp(0.0, 1.0)
}

struct Level {
    /// Reduced task rows over `(q̈, s̃)` without the scaling column, and their right-hand side.
    uj: DMatrix<f64>,
    ux: DVector<f64>,
    rhs: DVector<f64>,
}

fn levels(ctx: &TickContext, tasks: &[TaskEval], cfg: &SolverConfig) -> Vec<Level> {
    let n = ctx.dof();
    let mut out = Vec::with_capacity(tasks.len());
    let mut stack = DMatrix::zeros(0, n);
    for task in tasks {
        let j = &task.jacobian;
        let basis = range_basis(&(j * acceleration_null_projector(ctx, &stack)), cfg.rank_tol);
        out.push(Level {
            uj: basis.transpose() * j,
            ux: basis.transpose() * &task.xdd_d,
            rhs: -(basis.transpose() * ctx.task_offset(task, cfg)),
        });
        let mut grown = DMatrix::zeros(stack.nrows() + j.nrows(), n);
        grown.view_mut((0, 0), (stack.nrows(), n)).copy_from(&stack);
        grown.view_mut((stack.nrows(), 0), (j.nrows(), n)).copy_from(j);
        stack = grown;
    }
    out
}

/// QP over `(q̈, s̃)` for the `active` levels; `floor[i]` is a lower bound on `s_i`.
fn level_problem(
    ctx: &TickContext,
    levels: &[Level],
    active: &[bool],
    floor: &[f64],
    weights: &[f64],
    bounds: Option<&ShapedBounds>,
) -> QpProblem {
    let n = ctx.dof();
    let k = levels.len();
    let d = n + k;
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for (i, level) in levels.iter().enumerate() {
        if !active[i] {
            continue;
        }
        let sw = weights[i].sqrt();
        for r in 0..level.uj.nrows() {
            let mut row = DVector::zeros(d);
            row.rows_mut(0, n).copy_from(&level.uj.row(r).transpose());
            row[n + i] = -level.ux[r] / sw;
            rows.push(row);
            rhs.push(level.rhs[r]);
        }
    }
    let aeq = if rows.is_empty() {
        DMatrix::zeros(0, d)
    } else {
        DMatrix::from_rows(&rows.iter().map(|r| r.transpose()).collect::<Vec<_>>())
    };

    let mut h = DMatrix::zeros(d, d);
    h.view_mut((0, 0), (n, n)).copy_from(&ctx.mass);
    let mut f = DVector::zeros(d);
    for i in 0..k {
        h[(n + i, n + i)] = 2.0;
        f[n + i] = -2.0 * weights[i].sqrt();
    }
    let (ain, lower, upper, mut lb, mut ub) = joint_constraints(ctx, bounds, k);
    for i in 0..k {
        let sw = weights[i].sqrt();
        let live = active[i] && levels[i].uj.nrows() > 0;
        lb[n + i] = if live { sw * floor[i] } else { 0.0 };
        ub[n + i] = if live { sw } else { 0.0 };
    }
    QpProblem::new(h, f)
        .with_equalities(aeq, DVector::from_vec(rhs))
        .with_rows(ain, lower, upper)
        .with_bounds(lb, ub)
}

/// Prioritized DCTS, `tasks[0]` being the highest priority.
///
/// Levels are added one at a time: each stage keeps the scaling reached by the levels above as a
/// lower bound, so a lower-priority task can never reduce the scaling of a higher one. A level
/// that cannot be added without doing so is dropped for this tick (reported through `s`).
pub fn solve_dcts_multi(
    ctx: &TickContext,
    tasks: &[TaskEval],
    bounds: Option<&ShapedBounds>,
    cfg: &SolverConfig,
) -> Result<ControlOutput> {
    for t in tasks {
        ctx.check_task(t)?;
    }
    let n = ctx.dof();
    let k = tasks.len();
    let weights = cfg.level_weights(k);
    let levels = levels(ctx, tasks, cfg);
    // Slack on carried-over scalings, well above the QP tolerance.
    let carry = 1e-7;

    let mut active = vec![false; k];
    let mut floor = vec![0.0; k];
    let mut kept: Option<(QpProblem, crate::qp::QpSolution)> = None;
    let mut iterations = 0;
    for level in 0..k {
        active[level] = true;
        let problem = level_problem(ctx, &levels, &active, &floor, &weights, bounds);
        let sol = qp::solve(&problem, cfg.qp_tol, cfg.qp_max_iter)?;
        iterations += sol.iterations;
        if sol.status == QpStatus::Optimal {
            for i in 0..=level {
                if active[i] && levels[i].uj.nrows() > 0 {
                    floor[i] = (sol.x[n + i] / weights[i].sqrt() - carry).clamp(0.0, 1.0);
                }
            }
            kept = Some((problem, sol));
        } else if level == 0 {
            kept = Some((problem, sol));
            break;
        } else {
            log::debug!("DCTS level {level} dropped: {:?}", sol.status);
            active[level] = false;
        }
    }
    let (problem, sol) = kept.expect("first level always solved");

    let qdd = sol.x.rows(0, n).clone_owned();
    let s: Vec<f64> = (0..k)
        .map(|i| {
            if !active[i] {
                0.0
            } else if levels[i].uj.nrows() > 0 {
                (sol.x[n + i] / weights[i].sqrt()).clamp(0.0, 1.0)
            } else {
                achieved_fraction(&tasks[i], &qdd, &ctx.task_offset(&tasks[i], cfg))
            }
        })
        .collect();
    // Only round-off can leave the torque box here.
    let tau_raw = &ctx.mass * &qdd + ctx.compensation();
    let (tau, _) = naive_saturate(&tau_raw, &ctx.model.limits.tau_min, &ctx.model.limits.tau_max);
    let diagnostics = Diagnostics {
        qp_iterations: iterations,
        qp: Some(problem),
        ..Diagnostics::default()
    };
    Ok(qp_outcome(ctx, cfg, sol.status, tau, qdd, s, diagnostics))
}

/// Single-task DCTS.
pub fn solve_dcts_single(
    ctx: &TickContext,
    task: &TaskEval,
    bounds: Option<&ShapedBounds>,
    cfg: &SolverConfig,
) -> Result<ControlOutput> {
    solve_dcts_multi(ctx, std::slice::from_ref(task), bounds, cfg)
}
