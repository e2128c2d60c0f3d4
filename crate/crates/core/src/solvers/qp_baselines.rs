//! Soft-task QP baselines over the joint acceleration: the task is a least-squares term, torque
//! limits and acceleration bounds are hard constraints.

use nalgebra::{DMatrix, DVector};

use super::{qp_outcome, ControlOutput, Diagnostics, SolverConfig, TickContext};
use crate::error::Result;
use crate::limits::ShapedBounds;
use crate::qp::{self, QpProblem};
use crate::tasks::TaskEval;

/// Hard joint constraints on the first `n` QP variables, padded with `extra` free columns:
/// torque rows `τ_min − ν − g ≤ M q̈ ≤ τ_max − ν − g` and the acceleration box.
pub(super) fn joint_constraints(
    ctx: &TickContext,
    bounds: Option<&ShapedBounds>,
    extra: usize,
) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
    let n = ctx.dof();
    let d = n + extra;
    let comp = ctx.compensation();
    let mut ain = DMatrix::zeros(n, d);
    ain.view_mut((0, 0), (n, n)).copy_from(&ctx.mass);
    let lower = &ctx.model.limits.tau_min - &comp;
    let upper = &ctx.model.limits.tau_max - &comp;
    let mut lb = DVector::from_element(d, f64::NEG_INFINITY);
    let mut ub = DVector::from_element(d, f64::INFINITY);
    if let Some(b) = bounds {
        lb.rows_mut(0, n).copy_from(&b.acc_min);
        ub.rows_mut(0, n).copy_from(&b.acc_max);
    }
    (ain, lower, upper, lb, ub)
}

fn solve_soft(
    ctx: &TickContext,
    task: &TaskEval,
    bounds: Option<&ShapedBounds>,
    cfg: &SolverConfig,
    reg_h: DMatrix<f64>,
    reg_f: DVector<f64>,
) -> Result<ControlOutput> {
    ctx.check_task(task)?;
    let j = &task.jacobian;
    let a = &task.xdd_d - ctx.task_offset(task, cfg);
    let h = (j.transpose() * j + reg_h) * 2.0;
    let f = -(j.transpose() * a) * 2.0 + reg_f * 2.0;
    let (ain, lower, upper, lb, ub) = joint_constraints(ctx, bounds, 0);
    let problem = QpProblem::new(h, f).with_rows(ain, lower, upper).with_bounds(lb, ub);
    let sol = qp::solve(&problem, cfg.qp_tol, cfg.qp_max_iter)?;
    let tau = &ctx.mass * &sol.x + ctx.compensation();
    let diagnostics = Diagnostics {
        qp_iterations: sol.iterations,
        qp: Some(problem),
        ..Diagnostics::default()
    };
    Ok(qp_outcome(ctx, cfg, sol.status, tau, sol.x, vec![1.0], diagnostics))
}

/// `min ‖J q̈ − a‖² + w_reg ‖τ − g‖²` (or `‖τ‖²` when not regularizing about gravity).
pub fn solve_qp_mt(
    ctx: &TickContext,
    task: &TaskEval,
    bounds: Option<&ShapedBounds>,
    cfg: &SolverConfig,
) -> Result<ControlOutput> {
    // τ − g = M q̈ + ν
    let mut c = ctx.bias.clone();
    if !cfg.qp_mt_about_gravity {
        c += &ctx.gravity;
    }
    let reg_h = &ctx.mass * &ctx.mass * cfg.w_reg;
    let reg_f = &ctx.mass * c * cfg.w_reg;
    solve_soft(ctx, task, bounds, cfg, reg_h, reg_f)
}

/// `min ‖J q̈ − a‖² + w_reg ‖q̈ + D q̇‖²`: the regularizer pulls towards joint damping.
pub fn solve_qp_md(
    ctx: &TickContext,
    task: &TaskEval,
    bounds: Option<&ShapedBounds>,
    cfg: &SolverConfig,
) -> Result<ControlOutput> {
    let n = ctx.dof();
    let reg_h = DMatrix::identity(n, n) * cfg.w_reg;
    let reg_f = &ctx.qd * (cfg.d_joint * cfg.w_reg);
    solve_soft(ctx, task, bounds, cfg, reg_h, reg_f)
}
