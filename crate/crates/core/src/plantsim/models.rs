//! Built-in plants: the spring-cart testbed in its six uncertainty cases, an
//! inverted pendulum and a bouncing mass for the hybrid machinery.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ControlAffine, HybridSpec, PlantPair};
use crate::error::{Error, Result};
use crate::iolin::LieBundle;
use crate::matstack::{Mat, Vector};

pub const GRAVITY: f64 = 9.81;

/// `ẋ = A x + B u` with output `y = x₀`. Only meaningful as a
/// relative-degree-two plant when `B` has a zero first row.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    pub a: Mat,
    pub b: Mat,
}

impl LinearPlant {
    pub fn new(a: Mat, b: Mat) -> Self {
        Self { a, b }
    }

    pub fn double_integrator() -> Self {
        Self::new(
            Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            Mat::from_row_slice(2, 1, &[0.0, 1.0]),
        )
    }
}

impl ControlAffine for LinearPlant {
    fn name(&self) -> &str {
        "linear"
    }
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn drift(&self, x: &Vector) -> Vector {
        &self.a * x
    }
    fn input_field(&self, _x: &Vector) -> Mat {
        self.b.clone()
    }
    fn output(&self, x: &Vector) -> Vector {
        Vector::from_element(1, x[0])
    }
    fn lie(&self, x: &Vector) -> LieBundle {
        let c = self.a.row(0).into_owned();
        let ax = &self.a * x;
        LieBundle {
            y: self.output(x),
            ydot: Vector::from_element(1, (&c * x)[0]),
            lf2y: Vector::from_element(1, (&c * &ax)[0]),
            lglfy: Mat::from_row_slice(1, self.b.ncols(), (&c * &self.b).as_slice()),
        }
    }
    fn operating_region(&self) -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0); self.a.nrows()]
    }
    fn params(&self) -> Vec<(String, f64, &'static str)> {
        Vec::new()
    }
}

/// Second cart attached to cart 1 through a linear spring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondCart {
    pub mass: f64,
    pub spring: f64,
}

/// Sinusoidal shaking force `a·sin(2πft)` applied to one cart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shaking {
    pub amplitude: f64,
    pub frequency: f64,
    /// 0 for cart 1, 1 for cart 2.
    pub on_cart: usize,
}

impl Shaking {
    pub fn force(&self, t: f64) -> f64 {
        self.amplitude * (2.0 * PI * self.frequency * t).sin()
    }
}

/// Cart 1 driven by the motor force `u` against viscous damping, optionally
/// coupled to a second cart. State `(x₁, ẋ₁)` or `(x₁, ẋ₁, x₂, ẋ₂)`; output
/// `y = x₁ − target`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpringCart {
    pub cart1_mass: f64,
    pub damping: f64,
    pub target: f64,
    pub second: Option<SecondCart>,
    pub shaking: Option<Shaking>,
}

impl SpringCart {
    pub fn nominal(mass: f64, damping: f64, target: f64) -> Self {
        Self {
            cart1_mass: mass,
            damping,
            target,
            second: None,
            shaking: None,
        }
    }

    fn accelerations(&self, x: &Vector) -> (f64, Option<f64>) {
        let c = self.damping;
        match self.second {
            None => (-c * x[1] / self.cart1_mass, None),
            Some(s) => {
                let stretch = x[0] - x[2];
                let a1 = (-c * x[1] - s.spring * stretch) / self.cart1_mass;
                let a2 = (-c * x[3] + s.spring * stretch) / s.mass;
                (a1, Some(a2))
            }
        }
    }
}

impl ControlAffine for SpringCart {
    fn name(&self) -> &str {
        "spring_cart"
    }
    fn state_dim(&self) -> usize {
        if self.second.is_some() {
            4
        } else {
            2
        }
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &Vector) -> Vector {
        let (a1, a2) = self.accelerations(x);
        match a2 {
            None => Vector::from_vec(vec![x[1], a1]),
            Some(a2) => Vector::from_vec(vec![x[1], a1, x[3], a2]),
        }
    }
    fn input_field(&self, _x: &Vector) -> Mat {
        let mut g = Mat::zeros(self.state_dim(), 1);
        g[(1, 0)] = 1.0 / self.cart1_mass;
        g
    }
    fn output(&self, x: &Vector) -> Vector {
        Vector::from_element(1, x[0] - self.target)
    }
    fn lie(&self, x: &Vector) -> LieBundle {
        LieBundle {
            y: self.output(x),
            ydot: Vector::from_element(1, x[1]),
            lf2y: Vector::from_element(1, self.accelerations(x).0),
            lglfy: Mat::from_element(1, 1, 1.0 / self.cart1_mass),
        }
    }
    fn disturbance(&self, t: f64, _x: &Vector) -> Option<Vector> {
        let s = self.shaking?;
        let mut d = Vector::zeros(self.state_dim());
        match (s.on_cart, self.second) {
            (0, _) => d[1] = s.force(t) / self.cart1_mass,
            (_, Some(c2)) => d[3] = s.force(t) / c2.mass,
            (_, None) => return None,
        }
        Some(d)
    }
    fn observe(&self, x: &Vector) -> Vector {
        x.rows(0, 2).into_owned()
    }
    fn operating_region(&self) -> Vec<(f64, f64)> {
        let mut b = vec![(-0.05, 0.05), (-0.5, 0.5)];
        if self.second.is_some() {
            b.extend([(-0.05, 0.05), (-0.5, 0.5)]);
        }
        b
    }
    fn params(&self) -> Vec<(String, f64, &'static str)> {
        let mut p = vec![
            ("cart1_mass".to_string(), self.cart1_mass, "kg"),
            ("damping".to_string(), self.damping, "N*s/m"),
            ("target".to_string(), self.target, "m"),
        ];
        if let Some(s) = self.second {
            p.push(("cart2_mass".into(), s.mass, "kg"));
            p.push(("spring".into(), s.spring, "N/m"));
        }
        if let Some(s) = self.shaking {
            p.push(("shaking_amplitude".into(), s.amplitude, "N"));
            p.push(("shaking_frequency".into(), s.frequency, "Hz"));
        }
        p
    }
}

/// Physical parameters of the spring-cart testbed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpringCartParams {
    /// kg
    pub cart_mass: f64,
    /// N·s/m
    pub damping: f64,
    /// kg
    pub load_mass: f64,
    /// N/m
    pub spring: f64,
    /// kg, unloaded
    pub second_cart_mass: f64,
    /// N
    pub shaking_amplitude: f64,
    /// Hz
    pub shaking_frequency: f64,
    /// m
    pub target: f64,
}

impl Default for SpringCartParams {
    fn default() -> Self {
        Self {
            cart_mass: 0.75,
            damping: 2.0,
            load_mass: 1.5,
            spring: 200.0,
            second_cart_mass: 0.75,
            shaking_amplitude: 2.0,
            shaking_frequency: 1.5,
            target: 0.02,
        }
    }
}

/// Truth/nominal pair for spring-cart case 1 to 6:
///
/// 1. no uncertainty
/// 2. loaded cart 1
/// 3. loaded cart 1, shaking cart 1
/// 4. loaded cart 1, spring, loaded cart 2
/// 5. as 4, shaking cart 1
/// 6. as 4, shaking cart 2
pub fn spring_cart(case: u8, p: &SpringCartParams) -> Result<PlantPair> {
    let nominal = SpringCart::nominal(p.cart_mass, p.damping, p.target);
    let loaded = SpringCart {
        cart1_mass: p.cart_mass + p.load_mass,
        ..nominal.clone()
    };
    let coupled = SpringCart {
        second: Some(SecondCart {
            mass: p.second_cart_mass + p.load_mass,
            spring: p.spring,
        }),
        ..loaded.clone()
    };
    let shake = |on_cart| {
        Some(Shaking {
            amplitude: p.shaking_amplitude,
            frequency: p.shaking_frequency,
            on_cart,
        })
    };
    let truth = match case {
        1 => nominal.clone(),
        2 => loaded,
        3 => SpringCart {
            shaking: shake(0),
            ..loaded
        },
        4 => coupled,
        5 => SpringCart {
            shaking: shake(0),
            ..coupled
        },
        6 => SpringCart {
            shaking: shake(1),
            ..coupled
        },
        other => {
            return Err(Error::UnknownCase(format!(
                "spring_cart case {other} (expected 1..=6)"
            )))
        }
    };
    PlantPair::new(Arc::new(truth), Arc::new(nominal))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PendulumOutput {
    /// `y = θ − θd`
    Angle,
    /// `y = l·sinθ − yd`, horizontal tip position
    TipPosition,
}

/// Torque-driven pendulum measured from upright:
/// `θ̈ = (g/l) sinθ − bθ̇/(ml²) + u/(ml²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pendulum {
    pub mass: f64,
    pub length: f64,
    pub damping: f64,
    pub gravity: f64,
    pub target: f64,
    pub output: PendulumOutput,
}

impl Pendulum {
    pub fn new(mass: f64, length: f64, damping: f64) -> Self {
        Self {
            mass,
            length,
            damping,
            gravity: GRAVITY,
            target: 0.0,
            output: PendulumOutput::Angle,
        }
    }

    fn inertia(&self) -> f64 {
        self.mass * self.length * self.length
    }

    fn free_accel(&self, x: &Vector) -> f64 {
        self.gravity / self.length * x[0].sin() - self.damping * x[1] / self.inertia()
    }
}

impl ControlAffine for Pendulum {
    fn name(&self) -> &str {
        "inverted_pendulum"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &Vector) -> Vector {
        Vector::from_vec(vec![x[1], self.free_accel(x)])
    }
    fn input_field(&self, _x: &Vector) -> Mat {
        Mat::from_row_slice(2, 1, &[0.0, 1.0 / self.inertia()])
    }
    fn output(&self, x: &Vector) -> Vector {
        let y = match self.output {
            PendulumOutput::Angle => x[0],
            PendulumOutput::TipPosition => self.length * x[0].sin(),
        };
        Vector::from_element(1, y - self.target)
    }
    fn lie(&self, x: &Vector) -> LieBundle {
        let (th, om) = (x[0], x[1]);
        let acc = self.free_accel(x);
        let (ydot, lf2y, lglfy) = match self.output {
            PendulumOutput::Angle => (om, acc, 1.0 / self.inertia()),
            PendulumOutput::TipPosition => {
                let l = self.length;
                (
                    l * th.cos() * om,
                    -l * th.sin() * om * om + l * th.cos() * acc,
                    l * th.cos() / self.inertia(),
                )
            }
        };
        LieBundle {
            y: self.output(x),
            ydot: Vector::from_element(1, ydot),
            lf2y: Vector::from_element(1, lf2y),
            lglfy: Mat::from_element(1, 1, lglfy),
        }
    }
    fn operating_region(&self) -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0), (-2.0, 2.0)]
    }
    fn params(&self) -> Vec<(String, f64, &'static str)> {
        vec![
            ("mass".into(), self.mass, "kg"),
            ("length".into(), self.length, "m"),
            ("damping".into(), self.damping, "N*m*s/rad"),
            ("gravity".into(), self.gravity, "m/s^2"),
        ]
    }
}

/// Nominal pendulum and a truth with 30 % more mass and a 10 % longer arm.
pub fn inverted_pendulum(nominal: Pendulum) -> PlantPair {
    let truth = Pendulum {
        mass: nominal.mass * 1.3,
        length: nominal.length * 1.1,
        ..nominal.clone()
    };
    PlantPair {
        truth: Arc::new(truth),
        nominal: Arc::new(nominal),
    }
}

/// Mass sliding horizontally under the input force while bouncing
/// vertically. State `(p, ṗ, z, ż)`; output `y = p − target`. Each impact
/// restitutes the vertical speed and jolts the horizontal velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct BouncingMass {
    pub mass: f64,
    pub target: f64,
}

impl ControlAffine for BouncingMass {
    fn name(&self) -> &str {
        "bouncing_mass"
    }
    fn state_dim(&self) -> usize {
        4
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &Vector) -> Vector {
        Vector::from_vec(vec![x[1], 0.0, x[3], -GRAVITY])
    }
    fn input_field(&self, _x: &Vector) -> Mat {
        Mat::from_row_slice(4, 1, &[0.0, 1.0 / self.mass, 0.0, 0.0])
    }
    fn output(&self, x: &Vector) -> Vector {
        Vector::from_element(1, x[0] - self.target)
    }
    fn lie(&self, x: &Vector) -> LieBundle {
        LieBundle {
            y: self.output(x),
            ydot: Vector::from_element(1, x[1]),
            lf2y: Vector::from_element(1, 0.0),
            lglfy: Mat::from_element(1, 1, 1.0 / self.mass),
        }
    }
    fn operating_region(&self) -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0), (-1.0, 1.0), (0.0, 1.0), (-3.0, 3.0)]
    }
    fn params(&self) -> Vec<(String, f64, &'static str)> {
        vec![
            ("mass".into(), self.mass, "kg"),
            ("target".into(), self.target, "m"),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BouncingParams {
    pub mass: f64,
    pub target: f64,
    pub restitution: f64,
    /// Horizontal velocity jump at each impact, m/s.
    pub kick: f64,
    pub max_events: usize,
}

impl Default for BouncingParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            target: 0.0,
            restitution: 0.5,
            kick: 0.2,
            max_events: 20,
        }
    }
}

/// Bouncing mass with identical truth and nominal models, and its impact
/// guard `z + max(ż, 0)` with reset `ż⁺ = −e·ż⁻`, `ṗ⁺ = ṗ⁻ + kick`.
pub fn bouncing_mass(p: &BouncingParams) -> (PlantPair, HybridSpec) {
    let model = BouncingMass {
        mass: p.mass,
        target: p.target,
    };
    let (e, kick) = (p.restitution, p.kick);
    let hybrid = HybridSpec {
        guard: Arc::new(|x: &Vector| x[2] + x[3].max(0.0)),
        reset: Arc::new(move |x: &Vector| {
            let mut xp = x.clone();
            xp[2] = 0.0;
            xp[3] = -e * x[3];
            xp[1] += kick;
            xp
        }),
        max_events: p.max_events,
        kind: "impact".into(),
    };
    (PlantPair::exact(Arc::new(model)), hybrid)
}

/// A named entry of the model catalogue.
#[derive(Clone)]
pub struct BuiltinModel {
    pub name: &'static str,
    pub pair: PlantPair,
    pub hybrid: Option<HybridSpec>,
}

/// All built-in plants with default parameters.
pub fn builtin_models() -> Vec<BuiltinModel> {
    let sc = SpringCartParams::default();
    const NAMES: [&str; 6] = [
        "spring_cart_1",
        "spring_cart_2",
        "spring_cart_3",
        "spring_cart_4",
        "spring_cart_5",
        "spring_cart_6",
    ];
    let mut out: Vec<BuiltinModel> = NAMES
        .iter()
        .zip(1u8..)
        .map(|(name, case)| BuiltinModel {
            name,
            pair: spring_cart(case, &sc).expect("valid case"),
            hybrid: None,
        })
        .collect();
    out.push(BuiltinModel {
        name: "inverted_pendulum",
        pair: inverted_pendulum(Pendulum::new(1.0, 1.0, 0.1)),
        hybrid: None,
    });
    let (pair, hybrid) = bouncing_mass(&BouncingParams::default());
    out.push(BuiltinModel {
        name: "bouncing_mass",
        pair,
        hybrid: Some(hybrid),
    });
    out
}

/// Looks up a catalogue entry by name.
pub fn builtin(name: &str) -> Result<BuiltinModel> {
    builtin_models()
        .into_iter()
        .find(|m| m.name == name)
        .ok_or_else(|| Error::UnknownCase(name.to_string()))
}
