//! Numerical self-checks against independent oracles.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use rescbf_core::certify::{build_res_clf, rd2_lift, ReciprocalBarrier};
use rescbf_core::ctrlqp::{control, ControllerSpec, PlantConstraint, Variant};
use rescbf_core::iolin::{fd_lie_oracle, lie_bundle};
use rescbf_core::matstack::{
    is_positive_definite, lyapunov_residual, solve_lyapunov, spectral_abscissa,
};
use rescbf_core::oracles::{enumerate_qp, random_convex_qp};
use rescbf_core::plantsim::models::{builtin_models, Pendulum};
use rescbf_core::plantsim::{step_rk4, ControlAffine};
use rescbf_core::qpcore::{solve_qp, QpStatus};
use rescbf_core::robustify::{
    sample_uncertainty_margin, ChannelBounds, ConditionKind, RobustCondition, UncertaintyBounds,
};
use rescbf_core::{Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    /// Multiplies every threshold; values below 1 tighten the checks.
    pub tol_scale: f64,
    /// Added to `P[0,0]` before the Lyapunov residual is taken. Exists to
    /// prove that the check can fail.
    pub perturb_lyapunov: f64,
    pub seed: u64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            tol_scale: 1.0,
            perturb_lyapunov: 0.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    pub worst: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<18} {:>5} cases  worst {:>10.3e}  threshold {:>10.3e}  {}",
            self.name,
            self.cases,
            self.worst,
            self.threshold,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

fn result(name: &'static str, cases: usize, worst: f64, threshold: f64) -> CheckResult {
    CheckResult {
        name,
        cases,
        worst,
        threshold,
        passed: worst <= threshold,
    }
}

pub fn validate(opts: &ValidateOptions) -> Vec<CheckResult> {
    let s = opts.tol_scale;
    vec![
        lyapunov_check(opts.seed, opts.perturb_lyapunov, 1e-10 * s),
        qp_oracle_check(opts.seed, 1e-7 * s),
        qp_kkt_check(opts.seed, 1e-8 * s),
        fd_lie_check(opts.seed, 1e-5 * s),
        rk4_order_check(0.2 * s),
        robust_corner_check(opts.seed, 1e-12 * s),
        nominal_recovery_check(opts.seed, 1e-8 * s),
    ]
}

/// Random Hurwitz `A` (n ≤ 8) and SPD `Q`; reports the max-abs residual of
/// `AᵀP + PA + Q`. A solution that is not positive definite counts as a
/// failure.
pub fn lyapunov_check(seed: u64, perturb: f64, threshold: f64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    let cases = 100;
    for _ in 0..cases {
        let n = rng.random_range(1..=8);
        let m = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let shift = spectral_abscissa(&m) + rng.random_range(0.1..2.0);
        let a = m - Mat::identity(n, n) * shift;
        let l = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q = &l * l.transpose() + Mat::identity(n, n) * 0.1;
        let Ok(mut p) = solve_lyapunov(&a, &q) else {
            worst = f64::INFINITY;
            continue;
        };
        p[(0, 0)] += perturb;
        if !is_positive_definite(&p) {
            worst = f64::INFINITY;
            continue;
        }
        worst = worst.max(lyapunov_residual(&a, &p, &q));
    }
    result("lyapunov", cases, worst, threshold)
}

fn random_qps(seed: u64) -> Vec<rescbf_core::qpcore::QpProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    (0..1000)
        .map(|_| {
            let n = rng.random_range(1..=5);
            let m = rng.random_range(0..=6);
            random_convex_qp(&mut rng, n, m)
        })
        .collect()
}

/// Solver minimizer against exhaustive active-set enumeration.
pub fn qp_oracle_check(seed: u64, threshold: f64) -> CheckResult {
    let qps = random_qps(seed);
    let mut worst = 0.0_f64;
    for p in &qps {
        let reference = enumerate_qp(p);
        match (solve_qp(p), reference) {
            (Ok(sol), Some(z)) if sol.status == QpStatus::Optimal => {
                worst = worst.max((&sol.z - z).amax())
            }
            _ => worst = f64::INFINITY,
        }
    }
    result("qp_oracle", qps.len(), worst, threshold)
}

pub fn qp_kkt_check(seed: u64, threshold: f64) -> CheckResult {
    let qps = random_qps(seed);
    let worst = qps
        .iter()
        .map(|p| solve_qp(p).map_or(f64::INFINITY, |s| s.kkt.max()))
        .fold(0.0, f64::max);
    result("qp_kkt", qps.len(), worst, threshold)
}

fn random_state(model: &dyn ControlAffine, rng: &mut ChaCha8Rng) -> Vector {
    Vector::from_iterator(
        model.state_dim(),
        model
            .operating_region()
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..hi)),
    )
}

/// Analytic Lie derivatives against central differences, 100 states per
/// built-in model.
pub fn fd_lie_check(seed: u64, threshold: f64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for entry in builtin_models() {
        for model in [entry.pair.truth.as_ref(), entry.pair.nominal.as_ref()] {
            for _ in 0..100 {
                let x = random_state(model, &mut rng);
                cases += 1;
                worst = worst.max(match lie_bundle(model, &x) {
                    Ok(exact) => fd_lie_oracle(model, &x, 1e-6).max_rel_error(&exact),
                    Err(_) => f64::INFINITY,
                });
            }
        }
    }
    result("fd_lie", cases, worst, threshold)
}

/// Observed convergence order of the integrator on the pendulum; reports
/// the largest deviation of the step-halving slope from 4.
pub fn rk4_order_check(threshold: f64) -> CheckResult {
    let p = Pendulum::new(1.0, 1.0, 0.1);
    let x0 = Vector::from_vec(vec![0.8, 0.0]);
    let u = Vector::zeros(1);
    let run = |dt: f64| {
        let steps = (1.0 / dt).round() as usize;
        let mut x = x0.clone();
        for k in 0..steps {
            x = step_rk4(&p, k as f64 * dt, &x, &u, dt).expect("finite pendulum step");
        }
        x
    };
    let reference = run(1e-4);
    let errs: Vec<f64> = [2e-2, 1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&dt| (run(dt) - &reference).amax())
        .collect();
    let worst = errs
        .windows(2)
        .map(|w| ((w[0] / w[1]).log2() - 4.0).abs())
        .fold(0.0, f64::max);
    result("rk4_order", errs.len() - 1, worst, threshold)
}

/// Interior draws of the uncertainty box never beat the worst corner.
pub fn robust_corner_check(seed: u64, threshold: f64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let mut worst = f64::NEG_INFINITY;
    let cases = 1000;
    for _ in 0..cases {
        let cond = RobustCondition {
            kind: ConditionKind::Clf,
            psi0_nominal: rng.random_range(-5.0..5.0),
            bounds: ChannelBounds {
                d1_max: rng.random_range(0.0..3.0),
                d2_max: rng.random_range(0.0..0.95),
            },
            virtual_input: rng.random_range(-5.0..5.0),
            slack_hi: rng.random_range(0.0..2.0),
            slack_lo: rng.random_range(0.0..2.0),
        };
        let r = sample_uncertainty_margin(&cond, 1000, &mut rng);
        worst = worst.max(r.interior_max - r.corner_max);
    }
    result("robust_corners", cases, worst.max(0.0), threshold)
}

/// With zero bounds every robust variant returns the nominal input.
pub fn nominal_recovery_check(seed: u64, threshold: f64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4));
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for entry in builtin_models() {
        let model: Arc<dyn ControlAffine> = entry.pair.nominal.clone();
        let m = model.input_dim();
        let Ok(clf) = build_res_clf(m, 0.5, None, None) else {
            return result("nominal_recovery", cases, f64::INFINITY, threshold);
        };
        for variant in Variant::ALL.into_iter().filter(|v| v.is_robust()) {
            let mut robust =
                ControllerSpec::new(variant, clf.clone()).with_bounds(UncertaintyBounds::default());
            if variant.uses_constraints() {
                robust = robust.with_constraints(vec![PlantConstraint::Saturation { u_max: 50.0 }]);
            }
            if variant.uses_cbf() {
                robust = robust.with_cbf(ReciprocalBarrier {
                    h: rd2_lift(&[1.0; 1].repeat(m), 1e3, 1.0).expect("valid lift"),
                    gamma: 1.0,
                });
            }
            let nominal = robust.nominal_counterpart();
            for _ in 0..100 {
                let x = random_state(model.as_ref(), &mut rng);
                cases += 1;
                worst = worst.max(
                    match (
                        control(&robust, &x, model.as_ref()),
                        control(&nominal, &x, model.as_ref()),
                    ) {
                        (Ok((ur, _)), Ok((un, _))) => (ur - un).amax(),
                        _ => f64::INFINITY,
                    },
                );
            }
        }
    }
    result("nominal_recovery", cases, worst, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_validation_passes() {
        for r in validate(&ValidateOptions::default()) {
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn perturbed_lyapunov_solution_fails() {
        let r = lyapunov_check(7, 1e-3, 1e-10);
        assert!(!r.passed, "{r}");
    }

    #[test]
    fn extreme_tightening_fails() {
        let opts = ValidateOptions {
            tol_scale: 1e-30,
            ..ValidateOptions::default()
        };
        assert!(validate(&opts).iter().any(|r| !r.passed));
    }
}
