use std::sync::Arc;

use proptest::prelude::*;

use rescbf_core::certify::{build_res_clf, clf_terms, rd2_lift, ReciprocalBarrier};
use rescbf_core::ctrlqp::{ControllerSpec, QpController, Variant};
use rescbf_core::iolin::{lie_bundle, model_mismatch, transverse};
use rescbf_core::plantsim::models::{spring_cart, Pendulum, SpringCart, SpringCartParams};
use rescbf_core::plantsim::{simulate, step_rk4, ConstantMu, ControlAffine, PlantPair, SimConfig};
use rescbf_core::Vector;

fn v(xs: &[f64]) -> Vector {
    Vector::from_vec(xs.to_vec())
}

#[test]
fn io_control_linearizes_the_exact_pendulum() {
    let model = Arc::new(Pendulum::new(1.0, 1.0, 0.1));
    let pair = PlantPair::exact(model.clone());
    let mu = 0.7;
    let cfg = SimConfig {
        t_end: 0.5,
        ctrl_rate: 1e4,
        substeps: 1,
        hybrid: None,
    };
    let traj = simulate(
        &pair,
        &mut ConstantMu { mu: v(&[mu]) },
        &v(&[0.2, 0.0]),
        &cfg,
    )
    .unwrap();
    let y: Vec<f64> = traj.states.iter().map(|x| model.output(x)[0]).collect();
    // the hold makes ÿ = μ exact only at ticks; the residual is O(dt)
    let dt = traj.tick_period;
    for k in 1..y.len() - 1 {
        let ydd = (y[k + 1] - 2.0 * y[k] + y[k - 1]) / (dt * dt);
        assert!((ydd - mu).abs() < 1e-3, "tick {k}: {ydd}");
    }
}

#[test]
fn mismatch_is_zero_for_the_nominal_case_and_not_for_the_loaded_one() {
    let params = SpringCartParams::default();
    let x = v(&[0.004, -0.1]);
    let same = spring_cart(1, &params).unwrap();
    let (d1, d2) = model_mismatch(
        &lie_bundle(same.truth.as_ref(), &x).unwrap(),
        &lie_bundle(same.nominal.as_ref(), &x).unwrap(),
    )
    .unwrap();
    assert!(d1.amax() <= 1e-12 && d2.amax() <= 1e-12);

    let loaded = spring_cart(2, &params).unwrap();
    let (_, d2) = model_mismatch(
        &lie_bundle(loaded.truth.as_ref(), &x).unwrap(),
        &lie_bundle(loaded.nominal.as_ref(), &x).unwrap(),
    )
    .unwrap();
    let ratio = params.cart_mass / (params.cart_mass + params.load_mass);
    assert!((d2[(0, 0)] - (ratio - 1.0)).abs() < 1e-12);
}

#[test]
fn clf_derivative_matches_the_trajectory_on_the_exact_pair() {
    let model = Pendulum::new(1.0, 1.0, 0.1);
    let clf = build_res_clf(1, 0.5, None, None).unwrap();
    let spec = ControllerSpec::new(Variant::ClfQp, clf.clone());
    let mut ctrl = QpController::new(spec).unwrap();
    let mut x = v(&[0.4, -0.3]);
    for _ in 0..50 {
        let (u, diag) = ctrl.step(&x, &model).unwrap();
        let eta = transverse(&lie_bundle(&model, &x).unwrap()).eta;
        let terms = clf_terms(&clf, &eta);
        let vdot = terms.lfv + terms.lgv.dot(&diag.mu);
        let h = 1e-7;
        let x_h = step_rk4(&model, 0.0, &x, &u, h).unwrap();
        let eta_h = transverse(&lie_bundle(&model, &x_h).unwrap()).eta;
        let fd = (clf.value(&eta_h) - clf.value(&eta)) / h;
        assert!(
            (fd - vdot).abs() <= 1e-5 * (1.0 + vdot.abs()),
            "{fd} vs {vdot}"
        );
        x = step_rk4(&model, 0.0, &x, &u, 0.01).unwrap();
    }
}

#[test]
fn coupled_cart_exposes_only_cart_one() {
    let pair = spring_cart(4, &SpringCartParams::default()).unwrap();
    assert_eq!(pair.truth.state_dim(), 4);
    assert_eq!(
        pair.truth.observe(&v(&[0.1, 0.2, 0.3, 0.4])),
        v(&[0.1, 0.2])
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn nominal_barrier_stays_positive(x0 in -0.03..0.005_f64, v0 in -0.05..0.02_f64) {
        let cart = Arc::new(SpringCart::nominal(0.75, 2.0, 0.02));
        let cbf = ReciprocalBarrier { h: rd2_lift(&[1.0], 0.01, 5.0).unwrap(), gamma: 1.0 };
        let x0 = v(&[x0, v0]);
        prop_assume!(cbf.h.h(&x0) > 1e-3);
        let spec = ControllerSpec::new(Variant::CbfClfQp, build_res_clf(1, 0.2, None, None).unwrap()).with_cbf(cbf);
        let mut ctrl = QpController::new(spec).unwrap();
        let cfg = SimConfig { t_end: 3.0, ..SimConfig::default() };
        let traj = simulate(&PlantPair::exact(cart), &mut ctrl, &x0, &cfg).unwrap();
        for d in &traj.diagnostics {
            prop_assert!(d.h.unwrap() >= -1e-9);
        }
    }
}
