//! Closed-loop simulation: forward-dynamics plant, scripted external loads, scenario files,
//! energy and limit metrics, trace output.

mod integrate;
mod metrics;
mod run;
pub mod scenario;

pub use integrate::{forward_dynamics, mechanical_energy, step, Integrator};
pub use metrics::{apply_events, energy_metrics, plant_model, EnergyMetrics, ExternalLoad, Payload};
pub use run::{csv_header, run_scenario, summarize, write_csv, write_outputs, Abort, RunOptions, RunResult, Summary, TraceSample, VIOLATION_TOL};
pub use scenario::{Scenario, ScenarioFile, ValidationReport, BUNDLED_SCENARIOS};
