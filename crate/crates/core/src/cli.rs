//! Command-line front end: run scenarios across solvers, write traces and summaries, print a
//! comparison table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Parser;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sim::{run_scenario, write_outputs, RunOptions, RunResult, Scenario, ScenarioFile, ValidationReport, BUNDLED_SCENARIOS};
use crate::solvers::SolverKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_ABORT: i32 = 2;

#[derive(Debug, Clone, Parser)]
#[command(name = "dcts", version, about = "Closed-loop comparison of torque controllers on scenario files")]
pub struct Args {
    /// Scenario files, or names of bundled scenarios (see --list).
    #[arg(long = "scenario", num_args = 1.., required_unless_present = "list")]
    pub scenarios: Vec<String>,
    /// Solvers to run each scenario with (default: the scenario's own).
    #[arg(long = "solver", num_args = 1..)]
    pub solvers: Vec<String>,
    /// Output directory for traces and summaries.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Do not offset the joint bounds by the external torque.
    #[arg(long)]
    pub no_ext_force_bounds: bool,
    /// Do not include the external torque in the task constraint.
    #[arg(long)]
    pub no_ext_force_task: bool,
    /// Write the QP of fallback ticks next to the trace.
    #[arg(long)]
    pub dump_qp: bool,
    /// Check the scenarios without running them.
    #[arg(long)]
    pub validate: bool,
    /// Override the scenario noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// List the bundled scenarios and exit.
    #[arg(long)]
    pub list: bool,
}

/// Everything needed for one CLI invocation.
#[derive(Debug, Clone, Default)]
pub struct RunRequest {
    pub scenarios: Vec<String>,
    pub solvers: Vec<String>,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub ext_force_bounds: bool,
    pub ext_force_task: bool,
    pub dump_qp: bool,
}

impl From<&Args> for RunRequest {
    fn from(a: &Args) -> Self {
        Self {
            scenarios: a.scenarios.clone(),
            solvers: a.solvers.clone(),
            out_dir: a.out.clone(),
            seed: a.seed,
            ext_force_bounds: !a.no_ext_force_bounds,
            ext_force_task: !a.no_ext_force_task,
            dump_qp: a.dump_qp,
        }
    }
}

/// A path on disk, or else a bundled scenario name.
fn load_file(source: &str) -> Result<(ScenarioFile, Option<PathBuf>, String)> {
    let path = Path::new(source);
    if path.exists() {
        let file = ScenarioFile::load(path)?;
        return Ok((file, path.parent().map(Path::to_path_buf), source.to_string()));
    }
    let key = source.trim_start_matches("bundled:").trim_end_matches(".json");
    match BUNDLED_SCENARIOS.iter().find(|(f, _)| f.trim_end_matches(".json") == key) {
        Some((name, text)) => Ok((ScenarioFile::from_json_str(text, name)?, None, name.to_string())),
        None => Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such scenario file or bundled scenario"))),
    }
}

/// Schema and invariant check of one scenario without running it.
pub fn validate(source: &str) -> Result<ValidationReport> {
    let (file, base, _) = load_file(source)?;
    Ok(file.resolve(base.as_deref()).1)
}

fn prepare(req: &RunRequest) -> Result<Vec<Scenario>> {
    let solvers = req
        .solvers
        .iter()
        .map(|s| s.parse::<SolverKind>())
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for source in &req.scenarios {
        let (mut file, base, origin) = load_file(source)?;
        if let Some(seed) = req.seed {
            file.seed = seed;
        }
        file.solver_config.ext_force_bounds &= req.ext_force_bounds;
        file.solver_config.ext_force_task &= req.ext_force_task;
        let scenario = Scenario::from_file(file, base.as_deref(), &origin)?;
        for w in &scenario.warnings {
            log::warn!("{origin}: {w}");
        }
        if solvers.is_empty() {
            out.push(scenario);
        } else {
            for &kind in &solvers {
                out.push(scenario.with_solver(kind)?);
            }
        }
    }
    Ok(out)
}

fn status_cell(r: &RunResult) -> String {
    if let Some(a) = &r.aborted {
        return format!("aborted at {:.3} s", a.t);
    }
    let fallbacks: usize = ["infeasible", "max_iter"]
        .iter()
        .filter_map(|k| r.summary.status_counts.get(*k))
        .sum();
    if fallbacks > 0 {
        format!("{fallbacks} fallback ticks")
    } else {
        "ok".to_string()
    }
}

/// Per-scenario comparison table: one row per solver.
pub fn comparison_table(results: &[RunResult]) -> String {
    let mut out = String::new();
    let mut names: Vec<&str> = Vec::new();
    for r in results {
        if !names.contains(&r.scenario.as_str()) {
            names.push(&r.scenario);
        }
    }
    for name in names {
        let _ = writeln!(out, "Average errors: {name}");
        let _ = writeln!(
            out,
            "{:<14} {:>16} {:>18} {:>12} {:>12} {:>10} {:>8}  status",
            "solver", "position [m]", "acceleration [m/s²]", "vel. viol. %", "torque sat.", "max null E", "min s"
        );
        for r in results.iter().filter(|r| r.scenario == name) {
            let s = &r.summary;
            let vel = s.velocity_violation_pct.iter().cloned().fold(0.0, f64::max);
            let min_s = s.min_s.iter().cloned().fold(1.0, f64::min);
            let _ = writeln!(
                out,
                "{:<14} {:>16.6} {:>18.6} {:>12.3} {:>12} {:>10.3e} {:>8.4}  {}",
                r.solver.name(),
                s.mean_position_error,
                s.mean_acceleration_error,
                vel,
                s.torque_saturated_ticks,
                s.max_e_kin_null,
                min_s,
                status_cell(r)
            );
        }
        out.push('\n');
    }
    out
}

/// Run all (scenario, solver) pairs. Returns the results or a configuration error.
pub fn execute(req: &RunRequest) -> Result<Vec<RunResult>> {
    let scenarios = prepare(req)?;
    std::fs::create_dir_all(&req.out_dir).map_err(|e| Error::io(&req.out_dir, e))?;
    let options = RunOptions { dump_qp: req.dump_qp };
    let results = scenarios
        .par_iter()
        .map(|s| run_scenario(s, &options))
        .collect::<Result<Vec<_>>>()?;
    for (s, r) in scenarios.iter().zip(&results) {
        write_outputs(&req.out_dir, &format!("{}.{}", s.name(), s.solver), s, r)?;
    }
    let table = comparison_table(&results);
    let path = req.out_dir.join("comparison.txt");
    std::fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    Ok(results)
}

/// Exit code: 0 when every run completed, 2 when a solver aborted, 1 on configuration errors.
pub fn run(req: &RunRequest) -> i32 {
    match execute(req) {
        Ok(results) => {
            print!("{}", comparison_table(&results));
            if results.iter().any(|r| r.aborted.is_some()) {
                EXIT_ABORT
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

fn print_validation(sources: &[String]) -> i32 {
    let mut code = EXIT_OK;
    for source in sources {
        match validate(source) {
            Ok(report) => {
                for w in &report.warnings {
                    println!("{source}: warning: {w}");
                }
                if report.is_clean() {
                    println!("{source}: ok");
                } else {
                    code = EXIT_CONFIG;
                    for v in &report.violations {
                        println!("{source}: {v}");
                    }
                }
            }
            Err(e) => {
                code = EXIT_CONFIG;
                println!("{e}");
            }
        }
    }
    code
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with(args: Args) -> i32 {
    if args.list {
        for (name, _) in BUNDLED_SCENARIOS {
            println!("{}", name.trim_end_matches(".json"));
        }
        return EXIT_OK;
    }
    if args.validate {
        return print_validation(&args.scenarios);
    }
    run(&RunRequest::from(&args))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_validate_clean() {
        for (name, _) in BUNDLED_SCENARIOS {
            let report = validate(name).unwrap();
            assert!(report.is_clean(), "{name}: {:?}", report.violations);
            assert!(report.warnings.is_empty(), "{name}: {:?}", report.warnings);
        }
    }

    fn edited(name: &str, edit: impl FnOnce(&mut serde_json::Value)) -> tempfile::NamedTempFile {
        let text = BUNDLED_SCENARIOS.iter().find(|(f, _)| *f == name).unwrap().1;
        let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
        edit(&mut v);
        let f = tempfile::Builder::new().suffix(".json").tempfile().unwrap();
        std::fs::write(f.path(), serde_json::to_string_pretty(&v).unwrap()).unwrap();
        f
    }

    #[test]
    fn inverted_joint_limit_is_named() {
        let f = edited("push-recovery.json", |v| {
            v["limit_overrides"] = serde_json::json!([{ "joint": 3, "q_min": 1.0, "q_max": -1.0 }]);
        });
        let report = validate(f.path().to_str().unwrap()).unwrap();
        assert!(report.violations.iter().any(|v| v.field == "limits.q_min[3]"), "{:?}", report.violations);
    }

    #[test]
    fn all_violations_reported() {
        let f = edited("push-recovery.json", |v| {
            v["duration"] = serde_json::json!(-1.0);
            v["q0"] = serde_json::json!([0.0, 0.0]);
            v["solver"] = serde_json::json!("pid");
        });
        let report = validate(f.path().to_str().unwrap()).unwrap();
        let fields: Vec<&str> = report.violations.iter().map(|v| v.field.as_str()).collect();
        for expect in ["duration", "q0", "solver"] {
            assert!(fields.contains(&expect), "{fields:?}");
        }
    }

    #[test]
    fn margin_shrinks_controller_limits() {
        let s = Scenario::bundled("star-octagon").unwrap();
        let l = s.limits.as_ref().unwrap();
        let m = &s.model.limits;
        for j in 0..7 {
            assert!((l.v_max[j] - m.v_max[j] * 0.999).abs() < 1e-12);
            assert!((l.c_min[j] - m.q_min[j] * 0.999).abs() < 1e-12);
        }
        let f = edited("star-octagon.json", |v| {
            v["limits"]["margin"] = serde_json::json!(0.7);
        });
        let report = validate(f.path().to_str().unwrap()).unwrap();
        assert!(report.violations.iter().any(|v| v.field == "limits.margin"), "{:?}", report.violations);
    }

    #[test]
    fn late_event_warns() {
        let f = edited("push-recovery.json", |v| {
            v["events"][0]["start"] = serde_json::json!(2.9);
        });
        let report = validate(f.path().to_str().unwrap()).unwrap();
        assert!(report.is_clean());
        assert_eq!(report.warnings.len(), 1, "{:?}", report.warnings);
    }

    #[test]
    fn parse_error_has_position() {
        let f = tempfile::Builder::new().suffix(".json").tempfile().unwrap();
        std::fs::write(f.path(), "{\n  \"name\": \"x\",\n  \"q0\": [1, 2,, 3]\n}\n").unwrap();
        match validate(f.path().to_str().unwrap()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_solver_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let req = RunRequest {
            scenarios: vec!["push-recovery".into()],
            solvers: vec!["pid".into()],
            out_dir: dir.path().to_path_buf(),
            ext_force_bounds: true,
            ext_force_task: true,
            ..RunRequest::default()
        };
        assert_eq!(run(&req), EXIT_CONFIG);
        let msg = execute(&req).unwrap_err().to_string();
        for name in ["osc", "projector-osc", "qp-mt", "qp-md", "dcts"] {
            assert!(msg.contains(name), "{msg}");
        }
    }

    #[test]
    fn reruns_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let f = edited("push-recovery.json", |v| {
            v["duration"] = serde_json::json!(0.3);
            v["tau_ext_noise"] = serde_json::json!(0.05);
        });
        let mk = |dir: &Path| RunRequest {
            scenarios: vec![f.path().to_str().unwrap().to_string()],
            solvers: vec!["osc".into(), "dcts".into()],
            out_dir: dir.to_path_buf(),
            seed: Some(7),
            ext_force_bounds: true,
            ext_force_task: true,
            dump_qp: false,
        };
        assert_eq!(run(&mk(a.path())), EXIT_OK);
        assert_eq!(run(&mk(b.path())), EXIT_OK);
        for stem in ["push-recovery.osc", "push-recovery.dcts"] {
            for ext in ["csv", "summary.json"] {
                let name = format!("{stem}.{ext}");
                let x = std::fs::read(a.path().join(&name)).unwrap();
                let y = std::fs::read(b.path().join(&name)).unwrap();
                assert!(!x.is_empty());
                assert_eq!(x, y, "{name} differs");
            }
        }
    }
}
