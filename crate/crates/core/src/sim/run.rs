use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::integrate::{forward_dynamics, step};
use super::metrics::{apply_events, energy_from, plant_model, EnergyMetrics, Payload};
use super::scenario::Scenario;
use crate::error::{Error, Result};
use crate::qp::QpProblem;
use crate::rbd::{JointState, RobotModel};
use crate::solvers::{compute, SolverKind, SolverStatus, TickContext};
use crate::tasks::{TaskEval, TaskMode, TaskSpec};

/// Relative tolerance before a limit counts as violated.
pub const VIOLATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep the QP of every fallback tick (up to `MAX_DUMPS`).
    pub dump_qp: bool,
}

const MAX_DUMPS: usize = 20;

/// One control tick, recorded before the plant is advanced.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    /// Plant acceleration under the commanded torque.
    pub qdd: DVector<f64>,
    pub tau: DVector<f64>,
    /// External torque seen by the controller.
    pub tau_ext: DVector<f64>,
    pub s: Vec<f64>,
    /// Stacked task errors, highest priority first.
    pub task_error: DVector<f64>,
    pub energy: EnergyMetrics,
    /// Per joint: −1 below the lower limit, +1 above the upper one, 0 inside.
    pub pos_violation: Vec<i8>,
    pub vel_violation: Vec<i8>,
    pub tau_violation: Vec<i8>,
    /// Control point of the first task, world frame.
    pub ee_position: Vector3<f64>,
    /// Path error of the first task (distance to the current waypoint segment, or the norm of
    /// its position error).
    pub position_error: f64,
    /// `‖J q̈ + J̇q̇ − ẍ_d‖` of the first task.
    pub acceleration_error: f64,
    /// Norm of the orientation part of the first task's error [rad].
    pub orientation_error: f64,
    /// Commanded torque was clamped by the controller.
    pub torque_saturated: bool,
    /// A tracked path is still being followed.
    pub tracking: bool,
    pub status: SolverStatus,
}

#[derive(Debug, Clone, Serialize)]
pub struct Abort {
    pub t: f64,
    pub tick: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub solver: String,
    pub ticks: usize,
    pub simulated_time: f64,
    pub mean_position_error: f64,
    pub max_position_error: f64,
    pub mean_acceleration_error: f64,
    pub max_acceleration_error: f64,
    pub max_orientation_error_deg: f64,
    pub final_task_error: f64,
    /// Percentage of ticks with the joint beyond its limit.
    pub position_violation_pct: Vec<f64>,
    pub velocity_violation_pct: Vec<f64>,
    pub torque_violation_pct: Vec<f64>,
    /// Largest excess beyond the limit, relative to the limit magnitude.
    pub max_position_overshoot: Vec<f64>,
    pub max_velocity_overshoot: Vec<f64>,
    pub max_torque_overshoot: Vec<f64>,
    pub torque_saturated_ticks: usize,
    /// Percentage of torque-saturated ticks with any velocity violation.
    pub velocity_violation_pct_when_saturated: f64,
    pub min_s: Vec<f64>,
    pub max_e_kin_total: f64,
    pub max_e_kin_null: f64,
    pub min_e_kin_null: f64,
    pub integrated_e_acc: f64,
    pub status_counts: BTreeMap<String, usize>,
    pub aborted: Option<Abort>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub scenario: String,
    pub solver: SolverKind,
    pub trace: Vec<TraceSample>,
    pub summary: Summary,
    pub aborted: Option<Abort>,
    /// QP of the last solved tick, kept for abort diagnostics.
    pub last_qp: Option<QpProblem>,
    /// `(tick, problem)` for fallback ticks when dumping is enabled.
    pub qp_dumps: Vec<(usize, QpProblem)>,
}

impl RunResult {
    /// True when every tick was solved without a braking fallback and the run completed.
    pub fn all_optimal(&self) -> bool {
        self.aborted.is_none()
            && self
                .trace
                .iter()
                .all(|s| matches!(s.status, SolverStatus::Optimal | SolverStatus::Degraded))
    }
}

fn flags(x: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Vec<i8> {
    (0..x.len())
        .map(|j| {
            if x[j] > hi[j] + VIOLATION_TOL * hi[j].abs().max(1e-12) {
                1
            } else if x[j] < lo[j] - VIOLATION_TOL * lo[j].abs().max(1e-12) {
                -1
            } else {
                0
            }
        })
        .collect()
}

fn overshoot(x: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let up = (x[j] - hi[j]) / hi[j].abs().max(1e-12);
            let down = (lo[j] - x[j]) / lo[j].abs().max(1e-12);
            up.max(down).max(0.0)
        })
        .collect()
}

fn segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_squared();
    let u = if l2 > 0.0 { ((p - a).dot(&ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * u)).norm()
}

fn stack(evals: &[TaskEval], n: usize) -> DMatrix<f64> {
    let m: usize = evals.iter().map(|e| e.jacobian.nrows()).sum();
    let mut out = DMatrix::zeros(m, n);
    let mut r = 0;
    for e in evals {
        out.view_mut((r, 0), (e.jacobian.nrows(), n)).copy_from(&e.jacobian);
        r += e.jacobian.nrows();
    }
    out
}

fn mask(v: &Vector3<f64>, axes: &[usize]) -> Vector3<f64> {
    let mut out = Vector3::zeros();
    for &a in axes {
        out[a] = v[a];
    }
    out
}

struct PlantCache {
    key: Vec<(usize, u64, u64)>,
    model: RobotModel,
}

impl PlantCache {
    fn get(&mut self, nominal: &RobotModel, payloads: &[Payload]) -> Result<&RobotModel> {
        let key: Vec<_> = payloads
            .iter()
            .map(|p| (p.frame, p.mass.to_bits(), p.point.norm().to_bits()))
            .collect();
        if key != self.key {
            self.model = plant_model(nominal, payloads)?;
            self.key = key;
        }
        Ok(&self.model)
    }
}

/// Closed-loop simulation: control at `control_dt`, plant integration at `integrator_dt`.
///
/// Solver errors and non-finite states stop the run; the partial trace is returned with the abort
/// information. Only setup errors are returned as `Err`.
pub fn run_scenario(scenario: &Scenario, options: &RunOptions) -> Result<RunResult> {
    let file = &scenario.file;
    let model = &scenario.model;
    let n = model.dof();
    let cfg = &file.solver_config;
    let mut tasks: Vec<TaskSpec> = scenario.tasks.clone();
    let ticks = (file.duration / file.control_dt).round() as usize;
    let substeps = (file.control_dt / file.integrator_dt).round().max(1.0) as usize;
    let idt = file.control_dt / substeps as f64;
    let mut rng = StdRng::seed_from_u64(file.seed);
    let noise = if file.tau_ext_noise > 0.0 {
        Some(Normal::new(0.0, file.tau_ext_noise).map_err(|e| Error::InvalidProblem(e.to_string()))?)
    } else {
        None
    };
    let limits = &model.limits;
    let mut plants = PlantCache {
        key: Vec::new(),
        model: model.clone(),
    };

    let first = &scenario.tasks[0];
    let start = model.point_position(&scenario.q0, first.frame, &first.point)?;
    let mut segment_start = mask(&start, &first.position_axes);

    let mut state = JointState::new(scenario.q0.clone(), scenario.qd0.clone());
    let mut trace = Vec::with_capacity(ticks);
    let mut aborted = None;
    let mut last_qp = None;
    let mut qp_dumps = Vec::new();
    let mut last_qdd = DVector::zeros(n);

    for tick in 0..ticks {
        let t = tick as f64 * file.control_dt;
        let outcome = (|| -> Result<(TraceSample, JointState, Option<QpProblem>)> {
            let load = apply_events(&file.events, t, model, &state, &last_qdd)?;
            let mut measured = load.measured.clone();
            if let Some(dist) = &noise {
                for x in measured.iter_mut() {
                    *x += dist.sample(&mut rng);
                }
            }
            let ctx = TickContext::new(model, &state.q, &state.qd, &measured)?;

            let target = match &tasks[0].mode {
                TaskMode::Waypoints(w) => Some((w.index, w.current())),
                _ => None,
            };
            let evals = tasks
                .iter_mut()
                .map(|task| task.evaluate(model, &state.q, &state.qd, &ctx.chol))
                .collect::<Result<Vec<_>>>()?;
            let out = compute(scenario.solver, &ctx, &evals, scenario.limits.as_ref(), cfg)?;

            let plant = plants.get(model, &load.payloads)?;
            let qdd = forward_dynamics(plant, &state.q, &state.qd, &(&out.tau + &load.tau_ext))?;
            let energy = energy_from(
                &ctx.mass,
                |b| ctx.chol.solve(b),
                &ctx.compensation(),
                &state.qd,
                &out.tau,
                &stack(&evals, n),
                cfg.epsilon_lambda,
            );

            let task = &tasks[0];
            let top = &evals[0];
            let ee = model.point_position(&state.q, task.frame, &task.point)?;
            let np = task.position_axes.len();
            let (position_error, tracking) = match target {
                Some((index, Some(goal))) => {
                    let p = mask(&ee, &task.position_axes);
                    let d = segment_distance(&p, &segment_start, &mask(&goal, &task.position_axes));
                    if let TaskMode::Waypoints(w) = &task.mode {
                        if w.index != index {
                            segment_start = mask(&goal, &task.position_axes);
                        }
                    }
                    (d, true)
                }
                Some((_, None)) => (0.0, false),
                None => (top.error.rows(0, np).norm(), true),
            };
            let orientation_error = top.error.rows(np, top.error.len() - np).norm();
            let acceleration_error = (&top.jacobian * &qdd + &top.jdot_qd - &top.xdd_d).norm();

            let mut task_error = Vec::new();
            for e in &evals {
                task_error.extend(e.error.iter().copied());
            }
            let sample = TraceSample {
                t,
                q: state.q.clone(),
                qd: state.qd.clone(),
                qdd,
                tau: out.tau.clone(),
                tau_ext: measured,
                s: out.s.clone(),
                task_error: DVector::from_vec(task_error),
                energy,
                pos_violation: flags(&state.q, &limits.q_min, &limits.q_max),
                vel_violation: flags(&state.qd, &limits.v_min, &limits.v_max),
                tau_violation: flags(&out.tau, &limits.tau_min, &limits.tau_max),
                ee_position: ee,
                position_error,
                acceleration_error,
                orientation_error,
                torque_saturated: !out.diagnostics.torque_clamped.is_empty(),
                tracking,
                status: out.status,
            };

            let mut next = state.clone();
            for _ in 0..substeps {
                next = step(plant, &next, &out.tau, &load.tau_ext, idt, file.integrator)?;
            }
            Ok((sample, next, out.diagnostics.qp))
        })();
        match outcome {
            Ok((sample, next, qp)) => {
                if options.dump_qp
                    && matches!(sample.status, SolverStatus::Infeasible | SolverStatus::MaxIter)
                    && qp_dumps.len() < MAX_DUMPS
                {
                    if let Some(p) = &qp {
                        qp_dumps.push((tick, p.clone()));
                    }
                }
                if qp.is_some() {
                    last_qp = qp;
                }
                last_qdd = sample.qdd.clone();
                trace.push(sample);
                state = next;
            }
            Err(e) => {
                log::error!("{} / {}: aborted at t = {t:.4} s: {e}", file.name, scenario.solver);
                aborted = Some(Abort {
                    t,
                    tick,
                    message: e.to_string(),
                });
                break;
            }
        }
    }

    let summary = summarize(scenario, &trace, aborted.clone());
    Ok(RunResult {
        scenario: file.name.clone(),
        solver: scenario.solver,
        trace,
        summary,
        aborted,
        last_qp,
        qp_dumps,
    })
}

fn status_name(s: SolverStatus) -> &'static str {
    match s {
        SolverStatus::Optimal => "optimal",
        SolverStatus::Degraded => "degraded",
        SolverStatus::Infeasible => "infeasible",
        SolverStatus::MaxIter => "max_iter",
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

pub fn summarize(scenario: &Scenario, trace: &[TraceSample], aborted: Option<Abort>) -> Summary {
    let n = scenario.model.dof();
    let k = scenario.tasks.len();
    let l = &scenario.model.limits;
    let ticks = trace.len();
    let pct = |f: &dyn Fn(&TraceSample, usize) -> bool, j: usize| {
        if ticks == 0 {
            0.0
        } else {
            100.0 * trace.iter().filter(|s| f(s, j)).count() as f64 / ticks as f64
        }
    };
    let worst = |f: &dyn Fn(&TraceSample) -> Vec<f64>| {
        let mut out = vec![0.0f64; n];
        for s in trace {
            for (o, v) in out.iter_mut().zip(f(s)) {
                *o = o.max(v);
            }
        }
        out
    };
    let tracking: Vec<&TraceSample> = trace.iter().filter(|s| s.tracking).collect();
    let saturated: Vec<&TraceSample> = trace.iter().filter(|s| s.torque_saturated).collect();
    let mut status_counts = BTreeMap::new();
    for s in trace {
        *status_counts.entry(status_name(s.status).to_string()).or_insert(0) += 1;
    }
    let dt = scenario.file.control_dt;
    Summary {
        scenario: scenario.file.name.clone(),
        solver: scenario.solver.name().to_string(),
        ticks,
        simulated_time: ticks as f64 * dt,
        mean_position_error: mean(tracking.iter().map(|s| s.position_error)),
        max_position_error: tracking.iter().map(|s| s.position_error).fold(0.0, f64::max),
        mean_acceleration_error: mean(tracking.iter().map(|s| s.acceleration_error)),
        max_acceleration_error: tracking.iter().map(|s| s.acceleration_error).fold(0.0, f64::max),
        max_orientation_error_deg: trace.iter().map(|s| s.orientation_error).fold(0.0, f64::max).to_degrees(),
        final_task_error: trace.last().map_or(0.0, |s| s.task_error.norm()),
        position_violation_pct: (0..n).map(|j| pct(&|s, j| s.pos_violation[j] != 0, j)).collect(),
        velocity_violation_pct: (0..n).map(|j| pct(&|s, j| s.vel_violation[j] != 0, j)).collect(),
        torque_violation_pct: (0..n).map(|j| pct(&|s, j| s.tau_violation[j] != 0, j)).collect(),
        max_position_overshoot: worst(&|s| overshoot(&s.q, &l.q_min, &l.q_max)),
        max_velocity_overshoot: worst(&|s| overshoot(&s.qd, &l.v_min, &l.v_max)),
        max_torque_overshoot: worst(&|s| overshoot(&s.tau, &l.tau_min, &l.tau_max)),
        torque_saturated_ticks: saturated.len(),
        velocity_violation_pct_when_saturated: if saturated.is_empty() {
            0.0
        } else {
            100.0 * saturated.iter().filter(|s| s.vel_violation.iter().any(|&v| v != 0)).count() as f64
                / saturated.len() as f64
        },
        min_s: (0..k)
            .map(|i| trace.iter().filter_map(|s| s.s.get(i).copied()).fold(1.0, f64::min))
            .collect(),
        max_e_kin_total: trace.iter().map(|s| s.energy.e_kin_total).fold(0.0, f64::max),
        max_e_kin_null: trace.iter().map(|s| s.energy.e_kin_null).fold(f64::NEG_INFINITY, f64::max).max(0.0),
        min_e_kin_null: trace.iter().map(|s| s.energy.e_kin_null).fold(0.0, f64::min),
        integrated_e_acc: trace.iter().map(|s| s.energy.e_acc * dt).sum(),
        status_counts,
        aborted,
    }
}

/// CSV header: `t, q1..qn, qd1..qdn, tau1..taun, s1..sk, E_acc, E_kin_total, E_kin_task,
/// E_kin_null`, per-joint violation flags (`pos_viol`, `vel_viol`, `tau_viol`), then extras.
pub fn csv_header(n: usize, k: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for (name, count) in [("q", n), ("qd", n), ("tau", n), ("s", k)] {
        h.extend((1..=count).map(|i| format!("{name}{i}")));
    }
    h.extend(["E_acc", "E_kin_total", "E_kin_task", "E_kin_null"].map(String::from));
    for name in ["pos_viol", "vel_viol", "tau_viol"] {
        h.extend((1..=n).map(|i| format!("{name}{i}")));
    }
    h.extend((1..=n).map(|i| format!("qdd{i}")));
    h.extend((1..=n).map(|i| format!("tau_ext{i}")));
    h.extend(
        [
            "E_acc_full",
            "ee_x",
            "ee_y",
            "ee_z",
            "position_error",
            "acceleration_error",
            "orientation_error",
            "task_error_norm",
            "torque_saturated",
            "status",
        ]
        .map(String::from),
    );
    h
}

pub fn write_csv<W: Write>(out: W, result: &RunResult, n: usize, k: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(n, k))?;
    let f = |x: f64| x.to_string();
    for s in &result.trace {
        let mut row: Vec<String> = vec![f(s.t)];
        row.extend(s.q.iter().chain(s.qd.iter()).chain(s.tau.iter()).map(|&x| f(x)));
        row.extend((0..k).map(|i| f(s.s.get(i).copied().unwrap_or(0.0))));
        let e = &s.energy;
        row.extend([e.e_acc, e.e_kin_total, e.e_kin_task, e.e_kin_null].map(f));
        for v in [&s.pos_violation, &s.vel_violation, &s.tau_violation] {
            row.extend(v.iter().map(|x| x.to_string()));
        }
        row.extend(s.qdd.iter().chain(s.tau_ext.iter()).map(|&x| f(x)));
        row.extend(
            [
                e.e_acc_full,
                s.ee_position.x,
                s.ee_position.y,
                s.ee_position.z,
                s.position_error,
                s.acceleration_error,
                s.orientation_error,
                s.task_error.norm(),
            ]
            .map(f),
        );
        row.push(u8::from(s.torque_saturated).to_string());
        row.push(status_name(s.status).to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))?;
    Ok(())
}

/// Write `<stem>.csv`, `<stem>.summary.json` and any QP dumps into `dir`.
pub fn write_outputs(dir: &Path, stem: &str, scenario: &Scenario, result: &RunResult) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_csv(std::io::BufWriter::new(file), result, scenario.model.dof(), scenario.tasks.len())?;
    let json_path = dir.join(format!("{stem}.summary.json"));
    let text = serde_json::to_string_pretty(&result.summary)?;
    std::fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))?;
    for (tick, p) in &result.qp_dumps {
        let path = dir.join(format!("{stem}.qp-tick{tick}.json"));
        std::fs::write(&path, p.to_json()?).map_err(|e| Error::io(&path, e))?;
    }
    if result.aborted.is_some() {
        if let Some(p) = &result.last_qp {
            let path = dir.join(format!("{stem}.qp-abort.json"));
            std::fs::write(&path, p.to_json()?).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}
