//! Directory-wide scenario runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::runner::{run_scenario, RunMetrics};

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub path: PathBuf,
    pub outcome: Result<(RunMetrics, Vec<String>), String>,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        matches!(&self.outcome, Ok((_, failures)) if failures.is_empty())
    }
}

/// Every `*.toml` under `dir`, sorted by file name.
pub fn scenario_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

/// Runs every scenario in parallel, writing each one's outputs.
pub fn run_suite(dir: &Path) -> anyhow::Result<Vec<SuiteEntry>> {
    let files = scenario_files(dir)?;
    Ok(files
        .into_par_iter()
        .map(|path| {
            let outcome = ScenarioConfig::load(&path)
                .and_then(|cfg| run_scenario(&cfg))
                .map(|(out, _)| {
                    let failures = out
                        .assertions
                        .iter()
                        .filter(|a| !a.passed)
                        .map(|a| format!("{}: {}", a.name, a.detail))
                        .collect();
                    (out.metrics, failures)
                })
                .map_err(|e| format!("{e:#}"));
            SuiteEntry { path, outcome }
        })
        .collect())
}

pub fn summary_table(entries: &[SuiteEntry]) -> String {
    let mut s = format!(
        "{:<44} {:>8} {:>12} {:>10} {:>6} {:>10}\n",
        "scenario", "status", "min_h", "max|e|", "qpfail", "p95 [ms]"
    );
    for e in entries {
        let name = e
            .path
            .file_stem()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        match &e.outcome {
            Ok((m, failures)) => {
                let _ = writeln!(
                    s,
                    "{:<44} {:>8} {:>12} {:>10.3e} {:>6} {:>10.4}",
                    name,
                    if failures.is_empty() { "ok" } else { "FAIL" },
                    m.min_h.map_or_else(|| "-".into(), |h| format!("{h:.3e}")),
                    m.max_output_error,
                    m.qp_failures,
                    m.p95_solve_time * 1e3
                );
                for f in failures {
                    let _ = writeln!(s, "    {f}");
                }
            }
            Err(err) => {
                let _ = writeln!(s, "{name:<44} {:>8} {err}", "ERROR");
            }
        }
    }
    s
}
