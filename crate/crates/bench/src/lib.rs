//! Benchmark fixtures for the controller and solver hot paths.

use std::sync::Arc;

use rescbf_core::certify::{build_res_clf, rd2_lift, ReciprocalBarrier};
use rescbf_core::ctrlqp::{ControllerSpec, PlantConstraint, Variant};
use rescbf_core::plantsim::models::{spring_cart, Pendulum, SpringCartParams};
use rescbf_core::plantsim::ControlAffine;
use rescbf_core::robustify::{ChannelBounds, UncertaintyBounds};
use rescbf_core::Vector;

pub struct Fixture {
    pub name: &'static str,
    pub model: Arc<dyn ControlAffine>,
    pub spec: ControllerSpec,
    pub x: Vector,
}

/// Robust CBF-CLF-QP on the spring cart, two steps short of the barrier.
pub fn spring_cart_robust() -> Fixture {
    let pair = spring_cart(1, &SpringCartParams::default()).expect("builtin case");
    let cbf = ReciprocalBarrier {
        h: rd2_lift(&[1.0], 0.01, 5.0).expect("valid lift"),
        gamma: 3000.0,
    };
    let bounds = UncertaintyBounds {
        clf: ChannelBounds {
            d1_max: 3.0,
            d2_max: 0.7,
        },
        cbf: ChannelBounds {
            d1_max: 700.0,
            d2_max: 0.7,
        },
        ..UncertaintyBounds::default()
    };
    let spec = ControllerSpec::new(
        Variant::RobustCbfClfQpRobustConstraints,
        build_res_clf(1, 0.2, None, None).expect("valid clf"),
    )
    .with_cbf(cbf)
    .with_bounds(bounds);
    Fixture {
        name: "spring_cart_robust",
        model: pair.nominal,
        spec,
        x: Vector::from_vec(vec![-0.02, 0.05]),
    }
}

/// Saturated CLF-QP on the pendulum, far enough out that the bound binds.
pub fn pendulum_saturated() -> Fixture {
    let spec = ControllerSpec::new(
        Variant::ClfQpConstraints,
        build_res_clf(1, 0.2, None, None).expect("valid clf"),
    )
    .with_constraints(vec![PlantConstraint::Saturation { u_max: 6.0 }]);
    Fixture {
        name: "pendulum_saturated",
        model: Arc::new(Pendulum::new(1.0, 1.0, 0.1)),
        spec,
        x: Vector::from_vec(vec![0.5, 0.0]),
    }
}

pub fn fixtures() -> Vec<Fixture> {
    vec![spring_cart_robust(), pendulum_saturated()]
}

#[cfg(test)]
mod tests {
    use rescbf_core::ctrlqp::control;

    #[test]
    fn fixtures_solve() {
        for f in super::fixtures() {
            let (u, _) = control(&f.spec, &f.x, f.model.as_ref()).unwrap();
            assert!(u.iter().all(|v| v.is_finite()), "{}", f.name);
        }
    }
}
