//! The four torque controllers: projector-based OSC (optionally with null-space saturation and
//! naive torque clamping), the QP-MT / QP-MD baselines and DCTS (single and multi task).

mod dcts;
mod osc;
mod qp_baselines;

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::limits::{apply_external_offset, shape_acceleration_bounds, LimitSet, ShapedBounds};
use crate::qp::{QpProblem, QpStatus};
use crate::rbd::{mass_cholesky, RobotModel};
use crate::tasks::TaskEval;

pub use dcts::{solve_dcts_multi, solve_dcts_single};
pub use osc::{naive_saturate, solve_osc, solve_projector_osc};
pub use qp_baselines::{solve_qp_md, solve_qp_mt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    /// Plain OSC: closed form, no limit handling.
    Osc,
    /// OSC with null-space saturation of joint limits and naive torque clamping.
    ProjectorOsc,
    QpMt,
    QpMd,
    Dcts,
}

impl SolverKind {
    pub const ALL: [SolverKind; 5] = [
        SolverKind::Osc,
        SolverKind::ProjectorOsc,
        SolverKind::QpMt,
        SolverKind::QpMd,
        SolverKind::Dcts,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Osc => "osc",
            SolverKind::ProjectorOsc => "projector-osc",
            SolverKind::QpMt => "qp-mt",
            SolverKind::QpMd => "qp-md",
            SolverKind::Dcts => "dcts",
        }
    }

    pub fn supports_multiple_tasks(self) -> bool {
        self == SolverKind::Dcts
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownSolver(s.to_string()))
    }
}

fn default_w() -> f64 {
    1e10
}
fn default_ratio() -> f64 {
    1e2
}
fn default_eps() -> f64 {
    1e-6
}
fn default_tol() -> f64 {
    1e-8
}
fn default_iter() -> usize {
    200
}
fn default_w_reg() -> f64 {
    1e-3
}
fn default_d_joint() -> f64 {
    10.0
}
fn default_brake() -> f64 {
    10.0
}
fn default_rank_tol() -> f64 {
    1e-4
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Scaling weight of the lowest-priority level.
    #[serde(default = "default_w")]
    pub w: f64,
    /// Weight ratio between consecutive priority levels (higher priority weighs more).
    #[serde(default = "default_ratio")]
    pub level_ratio: f64,
    #[serde(default = "default_eps")]
    pub epsilon_lambda: f64,
    #[serde(default = "default_tol")]
    pub qp_tol: f64,
    #[serde(default = "default_iter")]
    pub qp_max_iter: usize,
    /// Regularization weight of the QP baselines.
    #[serde(default = "default_w_reg")]
    pub w_reg: f64,
    /// Joint damping [1/s] of the QP-MD regularizer.
    #[serde(default = "default_d_joint")]
    pub d_joint: f64,
    /// Braking rate [1/s] of the infeasibility fallback.
    #[serde(default = "default_brake")]
    pub d_brake: f64,
    /// Relative singular-value cut for reducing lower-priority task rows.
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    /// Include `−J M⁻¹ τ_ext` in task constraints.
    #[serde(default = "yes")]
    pub ext_force_task: bool,
    /// Offset acceleration bounds by `−J_c M⁻¹ τ_ext`.
    #[serde(default = "yes")]
    pub ext_force_bounds: bool,
    /// QP-MT regularizes `τ − g` (true) or the plain torque `τ` (false).
    #[serde(default = "yes")]
    pub qp_mt_about_gravity: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            w: default_w(),
            level_ratio: default_ratio(),
            epsilon_lambda: default_eps(),
            qp_tol: default_tol(),
            qp_max_iter: default_iter(),
            w_reg: default_w_reg(),
            d_joint: default_d_joint(),
            d_brake: default_brake(),
            rank_tol: default_rank_tol(),
            ext_force_task: true,
            ext_force_bounds: true,
            qp_mt_about_gravity: true,
        }
    }
}

impl SolverConfig {
    /// Weight of each level for `k` tasks, highest priority first.
    pub fn level_weights(&self, k: usize) -> Vec<f64> {
        (0..k).map(|i| self.w * self.level_ratio.powi((k - 1 - i) as i32)).collect()
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let positive = [
            ("w", self.w),
            ("qp_tol", self.qp_tol),
            ("w_reg", self.w_reg),
            ("d_joint", self.d_joint),
            ("d_brake", self.d_brake),
            ("rank_tol", self.rank_tol),
        ];
        for (name, x) in positive {
            if !(x.is_finite() && x > 0.0) {
                v.push(Violation::new(format!("solver.{name}"), "must be positive"));
            }
        }
        if !(self.level_ratio.is_finite() && self.level_ratio >= 10.0) {
            v.push(Violation::new("solver.level_ratio", "must be at least 10"));
        }
        if !(self.epsilon_lambda.is_finite() && self.epsilon_lambda >= 0.0) {
            v.push(Violation::new("solver.epsilon_lambda", "must be non-negative"));
        }
        if self.qp_max_iter == 0 {
            v.push(Violation::new("solver.qp_max_iter", "must be at least 1"));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Optimal,
    /// Solved, but with a damped/regularized task or a reduced fallback path.
    Degraded,
    /// QP infeasible: braking fallback commanded.
    Infeasible,
    /// QP hit its iteration limit: braking fallback commanded.
    MaxIter,
}

#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub qp_iterations: usize,
    /// Joints whose commanded torque was clamped (naive saturation).
    pub torque_clamped: Vec<usize>,
    /// Joints saturated in the null space (projector OSC).
    pub null_saturated: Vec<usize>,
    pub bounds_repaired: bool,
    /// The assembled QP, kept when dumping is requested.
    pub qp: Option<QpProblem>,
}

#[derive(Debug, Clone)]
pub struct ControlOutput {
    /// Commanded torque, gravity and bias compensation included.
    pub tau: DVector<f64>,
    /// The solver's acceleration solution (to which `M⁻¹τ_ext` is added by the plant).
    pub qdd: DVector<f64>,
    /// Task scaling factors in `[0, 1]`, highest priority first.
    pub s: Vec<f64>,
    pub status: SolverStatus,
    pub diagnostics: Diagnostics,
}

/// Per-tick dynamic quantities shared by all controllers.
#[derive(Debug, Clone)]
pub struct TickContext<'a> {
    pub model: &'a RobotModel,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub mass: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub bias: DVector<f64>,
    pub gravity: DVector<f64>,
    /// External joint torque as known to the controller.
    pub tau_ext: DVector<f64>,
    pub minv_tau_ext: DVector<f64>,
}

impl<'a> TickContext<'a> {
    pub fn new(model: &'a RobotModel, q: &DVector<f64>, qd: &DVector<f64>, tau_ext: &DVector<f64>) -> Result<Self> {
        let n = model.dof();
        crate::rbd::check_dim("tau_ext", tau_ext, n)?;
        let mass = model.mass_matrix(q)?;
        let chol = mass_cholesky(&mass)?;
        let bias = model.bias_forces(q, qd)?;
        let gravity = model.gravity_forces(q)?;
        let minv_tau_ext = chol.solve(tau_ext);
        Ok(Self {
            model,
            q: q.clone(),
            qd: qd.clone(),
            mass,
            chol,
            bias,
            gravity,
            tau_ext: tau_ext.clone(),
            minv_tau_ext,
        })
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    /// `ν + g`.
    pub fn compensation(&self) -> DVector<f64> {
        &self.bias + &self.gravity
    }

    /// Right-hand side offset `J̇q̇ (+ J M⁻¹τ_ext)` of a task constraint.
    pub fn task_offset(&self, task: &TaskEval, cfg: &SolverConfig) -> DVector<f64> {
        let mut b = task.jdot_qd.clone();
        if cfg.ext_force_task {
            b += &task.jacobian * &self.minv_tau_ext;
        }
        b
    }

    /// Joint-space acceleration bounds for the commanded acceleration, offset by `−M⁻¹τ_ext` when
    /// enabled.
    pub fn joint_bounds(&self, limits: &LimitSet, cfg: &SolverConfig) -> Result<ShapedBounds> {
        let shaped = shape_acceleration_bounds(limits, &self.q, &self.qd)?;
        if cfg.ext_force_bounds {
            let n = self.dof();
            apply_external_offset(&shaped, &DMatrix::identity(n, n), &self.minv_tau_ext)
        } else {
            Ok(shaped)
        }
    }

    /// `½ τ'ᵀ M⁻¹ τ'` with `τ' = τ − ν − g`.
    pub fn acceleration_energy(&self, tau: &DVector<f64>) -> f64 {
        let tp = tau - self.compensation();
        0.5 * tp.dot(&self.chol.solve(&tp))
    }

    /// Safe braking: `τ = clamp(ν + g + M(−D q̇))`.
    pub fn braking(&self, cfg: &SolverConfig) -> DVector<f64> {
        let qdd = -&self.qd * cfg.d_brake;
        let tau = &self.mass * &qdd + self.compensation();
        naive_saturate(&tau, &self.model.limits.tau_min, &self.model.limits.tau_max).0
    }

    pub(crate) fn check_task(&self, task: &TaskEval) -> Result<()> {
        if task.jacobian.ncols() != self.dof() {
            return Err(Error::Dimension {
                what: "task Jacobian columns",
                expected: self.dof(),
                got: task.jacobian.ncols(),
            });
        }
        let m = task.jacobian.nrows();
        if task.xdd_d.len() != m || task.jdot_qd.len() != m {
            return Err(Error::Dimension {
                what: "task vectors",
                expected: m,
                got: task.xdd_d.len(),
            });
        }
        Ok(())
    }
}

/// Finish a QP-based command: fallbacks on failure, status mapping.
pub(crate) fn qp_outcome(
    ctx: &TickContext,
    cfg: &SolverConfig,
    status: QpStatus,
    tau: DVector<f64>,
    qdd: DVector<f64>,
    s: Vec<f64>,
    mut diagnostics: Diagnostics,
) -> ControlOutput {
    match status {
        QpStatus::Optimal => ControlOutput {
            tau,
            qdd,
            s,
            status: SolverStatus::Optimal,
            diagnostics,
        },
        other => {
            let tau = ctx.braking(cfg);
            let qdd = ctx.chol.solve(&(&tau - ctx.compensation()));
            diagnostics.torque_clamped.clear();
            log::debug!("QP returned {other:?}; braking fallback");
            ControlOutput {
                tau,
                qdd,
                s: vec![0.0; s.len()],
                status: if other == QpStatus::Infeasible {
                    SolverStatus::Infeasible
                } else {
                    SolverStatus::MaxIter
                },
                diagnostics,
            }
        }
    }
}

/// Dispatch by solver kind. `limits` are joint-space limits; `None` disables limit handling.
pub fn compute(
    kind: SolverKind,
    ctx: &TickContext,
    tasks: &[TaskEval],
    limits: Option<&LimitSet>,
    cfg: &SolverConfig,
) -> Result<ControlOutput> {
    if tasks.is_empty() {
        return Err(Error::InvalidProblem("at least one task is required".into()));
    }
    if tasks.len() > 1 && !kind.supports_multiple_tasks() {
        return Err(Error::InvalidProblem(format!("solver `{kind}` handles a single task")));
    }
    let bounds = limits.map(|l| ctx.joint_bounds(l, cfg)).transpose()?;
    let mut out = match kind {
        SolverKind::Osc => solve_osc(ctx, &tasks[0], cfg)?,
        SolverKind::ProjectorOsc => solve_projector_osc(ctx, &tasks[0], bounds.as_ref(), cfg)?,
        SolverKind::QpMt => solve_qp_mt(ctx, &tasks[0], bounds.as_ref(), cfg)?,
        SolverKind::QpMd => solve_qp_md(ctx, &tasks[0], bounds.as_ref(), cfg)?,
        SolverKind::Dcts => solve_dcts_multi(ctx, tasks, bounds.as_ref(), cfg)?,
    };
    out.diagnostics.bounds_repaired = bounds.as_ref().is_some_and(|b| b.any_repaired());
    Ok(out)
}
