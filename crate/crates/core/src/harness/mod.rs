//! Closed-loop scenario runner: plant, grid, estimator and controller
//! wired together at the control period, with CSV traces and a metrics
//! summary per run.

pub mod metrics;
pub mod scenario;
pub mod selfcheck;
pub mod sim;
pub mod trace;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use metrics::{summarize, Metrics};
pub use scenario::{Event, Overrides, Scenario, Toggles};
pub use sim::{simulate, Baseline, ControlAction, Controller, RunOutcome, Setup};
pub use trace::{diff_traces, SignalDiff, Trace, TraceError};

use crate::error::{ConfigError, IntegrationError, PlantError};
use crate::mhe::MheError;
use crate::nmpc::MpcError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("plant equations failed")]
    Plant(#[from] PlantError),
    #[error("plant integration failed at t = {time} s")]
    Integration {
        time: f64,
        #[source]
        source: IntegrationError,
    },
    #[error("estimator failed")]
    Estimator(#[from] MheError),
    #[error("controller failed")]
    Controller(#[from] MpcError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("run aborted after {steps} of {planned} steps (trace kept in {trace})")]
    Aborted {
        steps: usize,
        planned: usize,
        trace: PathBuf,
        #[source]
        source: Box<HarnessError>,
    },
}

/// Files written by [`run_scenario`].
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub trace: PathBuf,
    pub metrics: PathBuf,
    pub summary: Metrics,
    /// Wall-clock seconds spent in the controller and estimator.
    pub control_seconds: f64,
    pub estimator_seconds: f64,
}

pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.txt";

/// Standard metrics plus run bookkeeping.
pub fn run_metrics(setup: &Setup, outcome: &RunOutcome) -> Result<Metrics, TraceError> {
    let events: Vec<f64> = setup.scenario.events.iter().map(Event::time).collect();
    let mut m = summarize(&outcome.trace, &events)?;
    m.set("steps_planned", outcome.steps_planned as f64);
    Ok(m)
}

/// Run a scenario and write `trace.csv` and `metrics.txt` into `out_dir`.
/// The trace is written even when the run aborts.
pub fn run_scenario(setup: &Setup, out_dir: &Path) -> Result<RunFiles, HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(TraceError::from)?;
    let outcome = simulate(setup);
    let trace_path = out_dir.join(TRACE_FILE);
    outcome.trace.save(&trace_path)?;
    if let Some(e) = outcome.error {
        return Err(HarnessError::Aborted {
            steps: outcome.steps_done,
            planned: outcome.steps_planned,
            trace: trace_path,
            source: Box::new(e),
        });
    }
    let summary = run_metrics(setup, &outcome)?;
    let mut text = summary.to_text();
    // Timing varies between runs, so it stays out of the trace.
    let _ = writeln!(text, "control_wall_seconds: {:.3}", outcome.control_seconds);
    let _ = writeln!(text, "estimator_wall_seconds: {:.3}", outcome.estimator_seconds);
    let metrics_path = out_dir.join(METRICS_FILE);
    std::fs::write(&metrics_path, text).map_err(TraceError::from)?;
    Ok(RunFiles {
        trace: trace_path,
        metrics: metrics_path,
        summary,
        control_seconds: outcome.control_seconds,
        estimator_seconds: outcome.estimator_seconds,
    })
}

/// Per-signal differences and per-metric deltas (`b - a`).
#[derive(Debug, Clone)]
pub struct Comparison {
    pub signals: Vec<SignalDiff>,
    pub metric_deltas: Vec<(String, f64)>,
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut s = String::from("signal,max_abs_diff,integral_abs_diff\n");
        for d in &self.signals {
            let _ = writeln!(s, "{},{:.11e},{:.11e}", d.name, d.max_abs, d.integral_abs);
        }
        s.push_str("\nmetric,delta\n");
        for (k, v) in &self.metric_deltas {
            let _ = writeln!(s, "{k},{v:.11e}");
        }
        s
    }
}

pub fn compare_runs(a: &Trace, b: &Trace) -> Result<Comparison, TraceError> {
    let signals = diff_traces(a, b)?;
    let ma = summarize(a, &[])?;
    let mb = summarize(b, &[])?;
    let metric_deltas = ma
        .entries
        .iter()
        .filter_map(|(k, va)| mb.get(k).map(|vb| (k.clone(), vb - va)))
        .collect();
    Ok(Comparison { signals, metric_deltas })
}
