//! Single-scenario execution, metrics and output files.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;

use rescbf_core::certify::{
    monitor_run, theorem1_bound_check, RelaxMonitor, ResClf, StepRelaxation, BOUND_REL_TOL,
};
use rescbf_core::ctrlqp::QpController;
use rescbf_core::iolin::{lie_bundle, transverse};
use rescbf_core::plantsim::{simulate, ControlAffine, Trajectory};
use rescbf_core::qpcore::{write_qp_dump, QpStatus};

use crate::config::{ExpectConfig, ScenarioConfig};

/// Summary of one closed-loop run; serialized to `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub name: String,
    pub variant: String,
    pub ticks: usize,
    pub completed: bool,
    pub error: Option<String>,
    /// Largest `|y − y_d|` over the ticks.
    pub max_output_error: f64,
    /// First time the output error drops below 2% of its initial value.
    pub settle_time: Option<f64>,
    pub min_h: Option<f64>,
    /// First tick with `h < 0`.
    pub violation_time: Option<f64>,
    pub max_delta: f64,
    pub w_final: f64,
    pub w_bar: f64,
    pub theorem1_verdict: bool,
    /// Largest `V_ε(t) / (e^{−c3 t/ε + w}V_ε(0))` over the ticks.
    pub theorem1_worst_ratio: f64,
    pub per_step_w: Vec<StepRelaxation>,
    pub events: usize,
    /// Ticks that were not solved to optimality or used the fallback input.
    pub qp_failures: usize,
    pub max_kkt: f64,
    /// s
    pub mean_solve_time: f64,
    pub p95_solve_time: f64,
    pub max_solve_time: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssertionOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub metrics: RunMetrics,
    pub assertions: Vec<AssertionOutcome>,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

/// Runs the scenario in memory.
pub fn run(cfg: &ScenarioConfig) -> anyhow::Result<RunOutput> {
    let (pair, hybrid, spec, x0) = cfg.build()?;
    let clf = spec.clf.clone();
    let mut ctrl = QpController::new(spec)?;
    let sim = cfg.sim_config(hybrid);
    let start = Instant::now();
    let (trajectory, error) = match simulate(&pair, &mut ctrl, &x0, &sim) {
        Ok(t) => (t, None),
        Err(f) => {
            let msg = f.to_string();
            (f.partial, Some(msg))
        }
    };
    let wall_time = start.elapsed().as_secs_f64();
    let metrics = compute_metrics(
        cfg,
        &clf,
        pair.nominal.as_ref(),
        &trajectory,
        error,
        wall_time,
    );
    let assertions = check_expectations(&cfg.expect, &metrics);
    Ok(RunOutput {
        trajectory,
        metrics,
        assertions,
    })
}

/// Runs the scenario and writes `trajectory.csv`, `metrics.json` and, for
/// hybrid plants, `events.csv` into the resolved output directory.
pub fn run_scenario(cfg: &ScenarioConfig) -> anyhow::Result<(RunOutput, PathBuf)> {
    let out = run(cfg)?;
    let dir = cfg.resolve_output_dir();
    write_outputs(&out, &dir, cfg.model_is_hybrid())?;
    Ok((out, dir))
}

pub fn write_outputs(out: &RunOutput, dir: &Path, hybrid: bool) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    out.trajectory
        .write_csv(BufWriter::new(File::create(dir.join("trajectory.csv"))?))?;
    if hybrid {
        out.trajectory
            .write_events_csv(BufWriter::new(File::create(dir.join("events.csv"))?))?;
    }
    #[derive(Serialize)]
    struct Report<'a> {
        metrics: &'a RunMetrics,
        assertions: &'a [AssertionOutcome],
    }
    let report = Report {
        metrics: &out.metrics,
        assertions: &out.assertions,
    };
    fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(())
}

impl ScenarioConfig {
    fn model_is_hybrid(&self) -> bool {
        matches!(self.model, crate::config::ModelConfig::BouncingMass { .. })
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() as f64 - 1.0) * q).ceil() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

pub fn compute_metrics(
    cfg: &ScenarioConfig,
    clf: &ResClf,
    nominal: &dyn ControlAffine,
    traj: &Trajectory,
    error: Option<String>,
    wall_time: f64,
) -> RunMetrics {
    let m = clf.outputs();
    let etas: Vec<_> = traj
        .diagnostics
        .iter()
        .zip(&traj.observed)
        .map(|(d, x)| {
            if d.eta.len() == 2 * m {
                Some(d.eta.clone())
            } else {
                lie_bundle(nominal, x).ok().map(|b| transverse(&b).eta)
            }
        })
        .collect();
    let out_err: Vec<f64> = etas
        .iter()
        .map(|e| e.as_ref().map_or(f64::NAN, |e| e.rows(0, m).amax()))
        .collect();
    let max_output_error = out_err
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let settle_time = out_err.first().and_then(|&e0| {
        let band = 0.02 * e0;
        out_err
            .iter()
            .position(|e| *e < band || (e0 == 0.0 && *e == 0.0))
            .map(|k| traj.times[k])
    });

    let hs: Vec<(f64, f64)> = traj
        .diagnostics
        .iter()
        .zip(&traj.times)
        .filter_map(|(d, t)| d.h.map(|h| (*t, h)))
        .collect();
    let min_h = hs.iter().map(|p| p.1).reduce(f64::min);
    let violation_time = hs.iter().find(|p| p.1 < 0.0).map(|p| p.0);

    let max_delta = traj
        .diagnostics
        .iter()
        .map(|d| d.d_eps())
        .fold(0.0, f64::max);
    let qp_failures = traj
        .diagnostics
        .iter()
        .filter(|d| d.fallback || d.qp_status.is_some_and(|s| s != QpStatus::Optimal))
        .count();
    let max_kkt = traj
        .diagnostics
        .iter()
        .filter_map(|d| d.kkt_max)
        .fold(0.0, f64::max);
    let mut solve: Vec<f64> = traj
        .diagnostics
        .iter()
        .filter(|d| d.qp_status.is_some())
        .map(|d| d.solve_time)
        .collect();
    solve.sort_by(f64::total_cmp);
    let mean_solve_time = if solve.is_empty() {
        0.0
    } else {
        solve.iter().sum::<f64>() / solve.len() as f64
    };

    // Relaxation monitor over the ticks where η is known.
    let samples: Vec<(f64, rescbf_core::Vector)> = traj
        .times
        .iter()
        .zip(&etas)
        .filter_map(|(t, e)| e.as_ref().map(|e| (*t, e.clone())))
        .collect();
    let event_times: Vec<f64> = traj.events.iter().map(|e| e.t).collect();
    let (mut w_final, mut w_bar, mut verdict, mut worst_ratio, mut per_step_w) =
        (0.0, 0.0, true, 0.0, Vec::new());
    if let Some((t0, eta0)) = samples.first() {
        let times: Vec<f64> = samples.iter().map(|s| s.0 - t0).collect();
        let v: Vec<f64> = samples.iter().map(|s| clf.value(&s.1)).collect();
        let (probe, w_log) = monitor_run(clf, eta0, f64::INFINITY, &times, &v, &event_times);
        w_final = probe.w;
        w_bar = cfg.monitor.w_bar.unwrap_or(w_final);
        // the bound presumes w never exceeds w̄; w is nondecreasing
        verdict &= w_final <= w_bar * (1.0 + BOUND_REL_TOL);
        let mut mon = RelaxMonitor::new(clf, eta0, w_bar);
        for (k, (t, eta)) in samples.iter().enumerate() {
            mon.w = w_log[k];
            let check = theorem1_bound_check(&mon, clf, eta, t - t0);
            verdict &= check.holds;
            let bound = (-clf.rate() * (t - t0) + mon.w).exp() * mon.v0;
            if bound > 0.0 {
                worst_ratio = f64::max(worst_ratio, v[k] / bound);
            }
        }
        per_step_w = probe.per_step_log;
    }

    RunMetrics {
        name: cfg.name.clone(),
        variant: format!("{:?}", cfg.controller.variant),
        ticks: traj.len(),
        completed: error.is_none(),
        error,
        max_output_error,
        settle_time,
        min_h,
        violation_time,
        max_delta,
        w_final,
        w_bar,
        theorem1_verdict: verdict,
        theorem1_worst_ratio: worst_ratio,
        per_step_w,
        events: traj.events.len(),
        qp_failures,
        max_kkt,
        mean_solve_time,
        p95_solve_time: percentile(&solve, 0.95),
        max_solve_time: solve.last().copied().unwrap_or(0.0),
        wall_time,
    }
}

pub fn check_expectations(e: &ExpectConfig, m: &RunMetrics) -> Vec<AssertionOutcome> {
    let mut out = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        out.push(AssertionOutcome {
            name: name.to_string(),
            passed,
            detail,
        })
    };
    let min_h = m.min_h.unwrap_or(f64::NAN);
    if let Some(lo) = e.min_h_at_least {
        push(
            "min_h_at_least",
            min_h >= lo,
            format!("min h = {min_h:e}, required >= {lo:e}"),
        );
    }
    if let Some(hi) = e.min_h_below {
        push(
            "min_h_below",
            min_h < hi,
            format!("min h = {min_h:e}, required < {hi:e}"),
        );
    }
    if let Some(want) = e.theorem1_holds {
        push(
            "theorem1_holds",
            m.theorem1_verdict == want,
            format!(
                "bound check {} (worst ratio {:.6})",
                m.theorem1_verdict, m.theorem1_worst_ratio
            ),
        );
    }
    if let Some(want) = e.completes {
        push(
            "completes",
            m.completed == want,
            m.error.clone().unwrap_or_else(|| "completed".into()),
        );
    }
    if let Some(limit) = e.max_wall_time {
        push(
            "max_wall_time",
            m.wall_time <= limit,
            format!("{:.3} s, limit {limit} s", m.wall_time),
        );
    }
    out
}

/// Simulates up to tick `tick` and writes the full and the reduced QP of
/// that tick. Returns the paths written.
pub fn dump_qp(cfg: &ScenarioConfig, tick: usize, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let (pair, hybrid, spec, x0) = cfg.build()?;
    let mut ctrl = QpController::new(spec)?;
    ctrl.keep_assembly = true;
    let mut sim = cfg.sim_config(hybrid);
    sim.t_end = (tick as f64 + 1.0) / cfg.ctrl_rate;
    let traj = match simulate(&pair, &mut ctrl, &x0, &sim) {
        Ok(t) => t,
        Err(f) => f.partial,
    };
    if traj.len() != tick + 1 {
        anyhow::bail!(
            "the run stopped after {} ticks, before tick {tick}",
            traj.len()
        );
    }
    let asm = ctrl
        .last_assembly
        .as_ref()
        .context("the controller did not assemble a QP at that tick")?;
    fs::create_dir_all(dir)?;
    let full = dir.join(format!("qp_tick{tick}.txt"));
    let reduced = dir.join(format!("qp_tick{tick}_reduced.txt"));
    write_qp_dump(&asm.problem, &full)?;
    write_qp_dump(&asm.reduced, &reduced)?;
    Ok(vec![full, reduced])
}
