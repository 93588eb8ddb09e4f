//! Single runs and (α, ε) sweeps over a scenario.

use std::collections::BTreeMap;
use std::path::Path;

use issf_wbc::safety::FilterMode;
use issf_wbc::scenario::Scenario;
use issf_wbc::sim::{run_scenario, RunOptions, RunTrace};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics;
use crate::output;
use crate::{HarnessError, Result};

/// Mode and parameter overrides for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRequest {
    pub mode: FilterMode,
    /// Class-K slope for the self/object collision rows.
    pub alpha: Option<f64>,
    /// Robustness parameter for the self/object collision rows.
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub trace_constraints: bool,
}

impl RunRequest {
    pub fn new(mode: FilterMode) -> Self {
        Self {
            mode,
            alpha: None,
            epsilon: None,
            seed: None,
            trace_constraints: false,
        }
    }

    pub fn with_params(mut self, alpha: Option<f64>, epsilon: Option<f64>) -> Self {
        self.alpha = alpha;
        self.epsilon = epsilon;
        self
    }
}

/// The scenario with the request's overrides applied.
pub fn configure(scenario: &Scenario, request: &RunRequest) -> Result<Scenario> {
    let mut s = scenario.clone();
    s.filter.mode = request.mode;
    if let Some(a) = request.alpha {
        s.filter.alpha.set_collision(a);
    }
    if let Some(e) = request.epsilon {
        s.filter.epsilon.set_collision(e);
    }
    if let Some(seed) = request.seed {
        s.sim.seed = seed;
    }
    s.validate()?;
    Ok(s)
}

fn label(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

/// Directory labels `(alpha, epsilon)` of a configured run; parameters the
/// mode ignores are shown as `na` (`inf` for the plain-CBF margin).
pub fn point_labels(scenario: &Scenario) -> (String, String) {
    let f = &scenario.filter;
    match f.mode {
        FilterMode::WithoutCbf => ("na".into(), "na".into()),
        FilterMode::Cbf | FilterMode::Ecbf => (label(f.alpha.self_collision), "inf".into()),
        FilterMode::IssfCbf => (label(f.alpha.self_collision), label(f.epsilon.self_collision)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub mode: String,
    pub alpha: String,
    pub epsilon: String,
    pub cycles: usize,
    pub min_h_per_kind: BTreeMap<String, f64>,
    /// Smallest self/object collision barrier, if any such rows exist.
    pub min_collision_h: Option<f64>,
    pub dbar: f64,
    pub collision_events: usize,
    pub runtime_per_cycle_us: f64,
    pub jitter: f64,
    pub mean_qdot_deviation: f64,
    pub relaxed_cycles: usize,
    pub clamped_cycles: usize,
    pub dropped_rows: usize,
    pub max_dynamics_residual: f64,
    /// Whether every row stays above its disturbance-degradation bound;
    /// only defined for ISSf-CBF runs.
    pub degradation_bound_holds: Option<bool>,
}

pub fn summarize(scenario: &Scenario, trace: &RunTrace) -> RunSummary {
    let (alpha, epsilon) = point_labels(scenario);
    let cycles = trace.cycles.len();
    RunSummary {
        scenario: scenario.name.clone(),
        mode: scenario.filter.mode.as_str().into(),
        alpha,
        epsilon,
        cycles,
        min_h_per_kind: metrics::min_h_per_kind(trace),
        min_collision_h: metrics::min_collision_h(trace),
        dbar: trace.dbar(),
        collision_events: metrics::collision_events(trace),
        runtime_per_cycle_us: if cycles == 0 {
            0.0
        } else {
            trace.controller_seconds * 1e6 / cycles as f64
        },
        jitter: metrics::jitter(trace, scenario.sim.dt_control),
        mean_qdot_deviation: metrics::mean_deviation(trace),
        relaxed_cycles: trace.relaxed_cycles,
        clamped_cycles: trace.clamped_cycles,
        dropped_rows: trace.dropped_rows,
        max_dynamics_residual: trace.max_dynamics_residual(),
        degradation_bound_holds: (scenario.filter.mode == FilterMode::IssfCbf)
            .then(|| metrics::degradation_bounds(trace).iter().all(|b| b.holds())),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scenario: Scenario,
    pub trace: RunTrace,
    pub summary: RunSummary,
}

pub fn run(scenario: &Scenario, request: &RunRequest) -> Result<RunOutcome> {
    let configured = configure(scenario, request)?;
    let options = RunOptions {
        trace_constraints: request.trace_constraints,
    };
    let trace = run_scenario(&configured, &options)?;
    let summary = summarize(&configured, &trace);
    Ok(RunOutcome {
        scenario: configured,
        trace,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub mode: String,
    pub alpha: String,
    pub epsilon: String,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
    pub remaining_collision_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub scenario: String,
    /// Collision events of the unfiltered run, the ratio denominator.
    pub reference_events: usize,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn point(&self, mode: FilterMode, alpha: f64, epsilon: Option<f64>) -> Option<&SweepPoint> {
        let eps = match mode {
            FilterMode::IssfCbf => epsilon.map(label),
            FilterMode::WithoutCbf => Some("na".into()),
            _ => Some("inf".into()),
        };
        let a = if mode == FilterMode::WithoutCbf {
            "na".into()
        } else {
            label(alpha)
        };
        self.points
            .iter()
            .find(|p| p.mode == mode.as_str() && p.alpha == a && Some(&p.epsilon) == eps.as_ref())
    }
}

/// Grid of run requests: the unfiltered mode runs once, plain CBF and eCBF
/// once per α, ISSf-CBF once per (α, ε).
pub fn sweep_grid(modes: &[FilterMode], alphas: &[f64], epsilons: &[f64]) -> Vec<RunRequest> {
    let mut grid = Vec::new();
    for &mode in modes {
        match mode {
            FilterMode::WithoutCbf => grid.push(RunRequest::new(mode)),
            FilterMode::Cbf | FilterMode::Ecbf => {
                for &a in alphas {
                    grid.push(RunRequest::new(mode).with_params(Some(a), None));
                }
            }
            FilterMode::IssfCbf => {
                for &a in alphas {
                    for &e in epsilons {
                        grid.push(RunRequest::new(mode).with_params(Some(a), Some(e)));
                    }
                }
            }
        }
    }
    grid
}

/// Run every grid point (plus the unfiltered reference) on `jobs` workers.
/// Failed points are recorded and the sweep continues. When `out_root` is
/// given each run is persisted and `sweep.csv` is written.
pub fn run_sweep(
    scenario: &Scenario,
    alphas: &[f64],
    epsilons: &[f64],
    modes: &[FilterMode],
    jobs: usize,
    out_root: Option<&Path>,
) -> Result<SweepResult> {
    if alphas.is_empty() || epsilons.is_empty() || modes.is_empty() {
        return Err(HarnessError::InvalidArgs("sweep grids must be non-empty".into()));
    }
    let mut grid = sweep_grid(modes, alphas, epsilons);
    if !modes.contains(&FilterMode::WithoutCbf) {
        grid.insert(0, RunRequest::new(FilterMode::WithoutCbf));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::InvalidArgs(e.to_string()))?;
    let results: Vec<(RunRequest, std::result::Result<RunSummary, String>)> = pool.install(|| {
        grid.par_iter()
            .map(|req| {
                let result = run(scenario, req).and_then(|outcome| {
                    if let Some(root) = out_root {
                        output::persist_run(root, &outcome, req.trace_constraints)?;
                    }
                    Ok(outcome.summary)
                });
                if let Err(e) = &result {
                    warn!("sweep point {:?} failed: {e}", req);
                }
                (*req, result.map_err(|e| e.to_string()))
            })
            .collect()
    });

    let reference_events = results
        .iter()
        .find(|(req, _)| req.mode == FilterMode::WithoutCbf)
        .and_then(|(_, r)| r.as_ref().ok())
        .map(|s| s.collision_events)
        .ok_or_else(|| HarnessError::InvalidArgs("reference run without CBF failed".into()))?;

    let points = results
        .into_iter()
        .filter(|(req, _)| modes.contains(&req.mode))
        .map(|(req, result)| {
            let configured = configure(scenario, &req)?;
            let (alpha, epsilon) = point_labels(&configured);
            Ok(match result {
                Ok(summary) => SweepPoint {
                    mode: req.mode.as_str().into(),
                    alpha,
                    epsilon,
                    remaining_collision_ratio: Some(metrics::remaining_ratio(
                        summary.collision_events,
                        reference_events,
                    )),
                    summary: Some(summary),
                    error: None,
                },
                Err(e) => SweepPoint {
                    mode: req.mode.as_str().into(),
                    alpha,
                    epsilon,
                    summary: None,
                    error: Some(e),
                    remaining_collision_ratio: None,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let result = SweepResult {
        scenario: scenario.name.clone(),
        reference_events,
        points,
    };
    if let Some(root) = out_root {
        let path = output::write_sweep_csv(root, &result)?;
        info!("wrote {}", path.display());
    }
    Ok(result)
}
