use std::path::{Path, PathBuf};
use std::process::Command;

use rescbf_cli::runner::{run_scenario, write_outputs};
use rescbf_cli::{run, ScenarioConfig, OUTPUT_ROOT_ENV};
use rescbf_core::qpcore::{parse_qp_dump, solve_qp};

const BIN: &str = env!("CARGO_BIN_EXE_rescbf");

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.toml"))
}

fn load(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&scenario_path(name)).unwrap()
}

fn h_column(csv_path: &Path) -> Vec<Option<f64>> {
    let mut rdr = csv::Reader::from_path(csv_path).unwrap();
    let col = rdr
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == "h")
        .unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            let s = &r[col];
            (!s.is_empty()).then(|| s.parse().unwrap())
        })
        .collect()
}

#[test]
fn identical_configs_write_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load("spring_cart_c3_robust");
    for sub in ["a", "b"] {
        let out = run(&cfg).unwrap();
        write_outputs(&out, &dir.path().join(sub), false).unwrap();
    }
    let a = std::fs::read(dir.path().join("a/trajectory.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/trajectory.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn metrics_agree_with_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load("spring_cart_c2_nominal");
    cfg.output_dir = Some(dir.path().to_path_buf());
    let (out, written) = run_scenario(&cfg).unwrap();
    assert_eq!(written, dir.path());
    let hs = h_column(&dir.path().join("trajectory.csv"));
    assert_eq!(hs.len(), out.metrics.ticks);
    let min_h = hs.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(Some(min_h), out.metrics.min_h);
    // a violation is reported exactly when the minimum is negative
    assert_eq!(out.metrics.violation_time.is_some(), min_h < 0.0);
    let first_negative = hs.iter().position(|h| h.is_some_and(|h| h < 0.0)).unwrap();
    assert_eq!(
        out.metrics.violation_time,
        Some(out.trajectory.times[first_negative])
    );

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap())
            .unwrap();
    for key in [
        "max_output_error",
        "settle_time",
        "min_h",
        "violation_time",
        "max_delta",
        "w_final",
        "theorem1_verdict",
        "qp_failures",
        "mean_solve_time",
        "max_solve_time",
    ] {
        assert!(json["metrics"].get(key).is_some(), "missing {key}");
    }
}

#[test]
fn run_honours_the_output_root() {
    let root = tempfile::tempdir().unwrap();
    let status = Command::new(BIN)
        .arg("run")
        .arg(scenario_path("bouncing_mass"))
        .env(OUTPUT_ROOT_ENV, root.path())
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let dir = root.path().join("bouncing_mass");
    for f in ["trajectory.csv", "events.csv", "metrics.json"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let events = std::fs::read_to_string(dir.join("events.csv")).unwrap();
    assert!(events.starts_with("t_event,kind\n"));
    assert!(events.lines().count() > 1);
}

#[test]
fn suite_exit_code_reflects_assertions() {
    let root = tempfile::tempdir().unwrap();
    let scenarios = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario_path("pendulum_strict_clf")).unwrap();
    std::fs::write(scenarios.path().join("good.toml"), &text).unwrap();
    let suite = |dir: &Path| {
        Command::new(BIN)
            .arg("suite")
            .arg(dir)
            .env(OUTPUT_ROOT_ENV, root.path())
            .output()
            .unwrap()
    };
    assert!(suite(scenarios.path()).status.success());

    // the pendulum has no barrier, so a barrier assertion cannot hold
    let failing = text
        .replace("[expect]", "[expect]\nmin_h_at_least = 0.0")
        .replace(
            "name = \"pendulum_strict_clf\"",
            "name = \"pendulum_expect_barrier\"",
        );
    std::fs::write(scenarios.path().join("bad.toml"), failing).unwrap();
    let out = suite(scenarios.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn dump_qp_reproduces_the_tick() {
    let dir = tempfile::tempdir().unwrap();
    let tick = 40;
    let out = Command::new(BIN)
        .args([
            "dump-qp",
            scenario_path("pendulum_saturated").to_str().unwrap(),
            "--tick",
            "40",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let full = parse_qp_dump(
        &std::fs::read_to_string(dir.path().join(format!("qp_tick{tick}.txt"))).unwrap(),
    )
    .unwrap();
    let sol = solve_qp(&full).unwrap();
    let u_index = full.var_names.iter().position(|n| n == "u0").unwrap();

    let run = run(&load("pendulum_saturated")).unwrap();
    let u_logged = run.trajectory.inputs[tick][0];
    assert!(
        (sol.z[u_index] - u_logged).abs() < 1e-7,
        "{} vs {u_logged}",
        sol.z[u_index]
    );
}

#[test]
fn validate_passes_and_the_perturbation_hook_fails_it() {
    let ok = Command::new(BIN).arg("validate").output().unwrap();
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stdout)
    );
    let bad = Command::new(BIN)
        .args(["validate", "--perturb-lyapunov", "1e-3"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let tight = Command::new(BIN)
        .args(["validate", "--tol", "1e-30"])
        .output()
        .unwrap();
    assert_eq!(tight.status.code(), Some(1));
}

#[test]
fn bad_config_is_an_error_exit() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.toml");
    std::fs::write(&path, "name = \"x\"\n").unwrap();
    let out = Command::new(BIN).arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn a_w_bar_below_the_observed_relaxation_fails_the_verdict() {
    let mut cfg = load("spring_cart_c2_robust");
    let free = run(&cfg).unwrap().metrics;
    assert!(free.theorem1_verdict && free.w_final > 0.0);
    cfg.monitor.w_bar = Some(0.5 * free.w_final);
    let capped = run(&cfg).unwrap();
    assert!(!capped.metrics.theorem1_verdict);
    assert!(!capped.passed());
}
