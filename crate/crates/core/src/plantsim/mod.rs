//! Control-affine plants, RK4 integration and sampled-data closed-loop
//! simulation with optional hybrid guard/reset events.
//!
//! The controller only ever sees the nominal model; the plant state is
//! integrated with the truth model under a zero-order hold between ticks.

pub mod models;

use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;

use crate::ctrlqp::TickDiagnostics;
use crate::error::{Error, Result};
use crate::iolin::{self, LieBundle};
use crate::matstack::{Mat, Vector};

/// Plant `ẋ = f(x) + g(x) u (+ d(t, x))` with relative-degree-two outputs.
pub trait ControlAffine: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn drift(&self, x: &Vector) -> Vector;
    /// `n × m` input matrix.
    fn input_field(&self, x: &Vector) -> Mat;
    fn output(&self, x: &Vector) -> Vector;
    /// Closed-form `{y, ẏ, Lf²y, LgLfy}`.
    fn lie(&self, x: &Vector) -> LieBundle;

    /// Exogenous, time-varying contribution to `ẋ`. Truth models only.
    fn disturbance(&self, _t: f64, _x: &Vector) -> Option<Vector> {
        None
    }

    /// Projection of the plant state onto what the controller measures.
    fn observe(&self, x: &Vector) -> Vector {
        x.clone()
    }

    /// Box used to draw random states in the operating region.
    fn operating_region(&self) -> Vec<(f64, f64)>;

    /// Named physical parameters as `(name, value, unit)`.
    fn params(&self) -> Vec<(String, f64, &'static str)>;

    fn vector_field(&self, t: f64, x: &Vector, u: &Vector) -> Vector {
        let mut dx = self.drift(x) + self.input_field(x) * u;
        if let Some(d) = self.disturbance(t, x) {
            dx += d;
        }
        dx
    }
}

/// Truth and nominal models sharing input and output definitions. Their
/// parameter difference is the model uncertainty.
#[derive(Clone)]
pub struct PlantPair {
    pub truth: Arc<dyn ControlAffine>,
    pub nominal: Arc<dyn ControlAffine>,
}

impl PlantPair {
    pub fn new(truth: Arc<dyn ControlAffine>, nominal: Arc<dyn ControlAffine>) -> Result<Self> {
        if truth.input_dim() != nominal.input_dim() {
            return Err(Error::Dimension {
                context: "PlantPair inputs",
                expected: nominal.input_dim().to_string(),
                got: truth.input_dim().to_string(),
            });
        }
        let probe = Vector::zeros(truth.state_dim());
        let observed = truth.observe(&probe);
        if observed.len() != nominal.state_dim() {
            return Err(Error::Dimension {
                context: "PlantPair observation",
                expected: nominal.state_dim().to_string(),
                got: observed.len().to_string(),
            });
        }
        Ok(Self { truth, nominal })
    }

    /// Same model on both sides (no uncertainty).
    pub fn exact(model: Arc<dyn ControlAffine>) -> Self {
        Self {
            truth: model.clone(),
            nominal: model,
        }
    }
}

type GuardFn = dyn Fn(&Vector) -> f64 + Send + Sync;
type ResetFn = dyn Fn(&Vector) -> Vector + Send + Sync;

/// Guard surface and reset map. An event fires when `guard` goes from
/// positive to non-positive.
#[derive(Clone)]
pub struct HybridSpec {
    pub guard: Arc<GuardFn>,
    pub reset: Arc<ResetFn>,
    pub max_events: usize,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridEvent {
    pub t: f64,
    pub kind: String,
}

/// Bisection tolerance on event times, in seconds.
pub const EVENT_TIME_TOL: f64 = 1e-10;

pub trait Controller {
    /// Computes the input at tick time `t` from the observed state, using
    /// only the nominal model.
    fn control(
        &mut self,
        t: f64,
        x: &Vector,
        nominal: &dyn ControlAffine,
    ) -> Result<(Vector, TickDiagnostics)>;
}

/// Applies `u = 0`.
#[derive(Debug, Default, Clone)]
pub struct ZeroInput;

impl Controller for ZeroInput {
    fn control(
        &mut self,
        _t: f64,
        _x: &Vector,
        nominal: &dyn ControlAffine,
    ) -> Result<(Vector, TickDiagnostics)> {
        let u = Vector::zeros(nominal.input_dim());
        Ok((u.clone(), TickDiagnostics::passive(u)))
    }
}

/// IO-linearizing control with a constant virtual input:
/// `u = (LgLfy)⁻¹ (μ − Lf²y)` on the nominal model. `μ = 0` is pure
/// feedforward.
#[derive(Debug, Clone)]
pub struct ConstantMu {
    pub mu: Vector,
}

impl Controller for ConstantMu {
    fn control(
        &mut self,
        _t: f64,
        x: &Vector,
        nominal: &dyn ControlAffine,
    ) -> Result<(Vector, TickDiagnostics)> {
        let b = iolin::lie_bundle(nominal, x)?;
        let u = iolin::io_control(&b, &self.mu)?;
        let mut d = TickDiagnostics::passive(u.clone());
        d.mu = self.mu.clone();
        Ok((u, d))
    }
}

/// Sampled closed-loop record: one row per controller tick.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Full plant (truth) state at each tick.
    pub states: Vec<Vector>,
    /// Controller-visible state at each tick.
    pub observed: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub diagnostics: Vec<TickDiagnostics>,
    pub events: Vec<HybridEvent>,
    pub final_time: f64,
    pub final_state: Vector,
    pub tick_period: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Tick-sampled observations followed by the final observation.
    pub fn observed_with_final(&self, truth: &dyn ControlAffine) -> Vec<Vector> {
        let mut out = self.observed.clone();
        out.push(truth.observe(&self.final_state));
        out
    }

    /// Writes the per-tick CSV:
    /// `t,x0..x{n-1},u0..u{m-1},V,delta,d_eps,h,B,qp_status`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self
            .states
            .first()
            .map_or(self.final_state.len(), |s| s.len());
        let m = self.inputs.first().map_or(0, |u| u.len());
        let mut header = String::from("t");
        for i in 0..n {
            let _ = write!(header, ",x{i}");
        }
        for i in 0..m {
            let _ = write!(header, ",u{i}");
        }
        header.push_str(",V,delta,d_eps,h,B,qp_status");
        writeln!(w, "{header}")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for k in 0..self.len() {
            let mut line = self.times[k].to_string();
            for x in self.states[k].iter() {
                let _ = write!(line, ",{x}");
            }
            for u in self.inputs[k].iter() {
                let _ = write!(line, ",{u}");
            }
            let d = &self.diagnostics[k];
            let _ = write!(
                line,
                ",{},{},{},{},{},{}",
                d.v_eps,
                d.delta_max(),
                d.d_eps(),
                opt(d.h),
                opt(d.b_barrier),
                d.qp_status.map_or("none", |s| s.as_str())
            );
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Sidecar event log `t_event,kind`.
    pub fn write_events_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_event,kind")?;
        for e in &self.events {
            writeln!(w, "{},{}", e.t, e.kind)?;
        }
        Ok(())
    }
}

/// One classical Runge–Kutta step of `ẋ = f(x) + g(x)u (+ d(t, x))` with `u`
/// held constant.
pub fn step_rk4(
    model: &dyn ControlAffine,
    t: f64,
    x: &Vector,
    u: &Vector,
    dt: f64,
) -> Result<Vector> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!(
            "integration step must be positive, got {dt}"
        )));
    }
    let k1 = model.vector_field(t, x, u);
    let k2 = model.vector_field(t + 0.5 * dt, &(x + &k1 * (0.5 * dt)), u);
    let k3 = model.vector_field(t + 0.5 * dt, &(x + &k2 * (0.5 * dt)), u);
    let k4 = model.vector_field(t + dt, &(x + &k3 * dt), u);
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            t: t + dt,
            last_finite: x.iter().copied().collect(),
        });
    }
    Ok(next)
}

/// Simulation settings besides the plant pair and controller.
#[derive(Clone)]
pub struct SimConfig {
    pub t_end: f64,
    /// Controller rate in Hz.
    pub ctrl_rate: f64,
    /// RK4 steps per controller tick.
    pub substeps: usize,
    pub hybrid: Option<HybridSpec>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_end: 10.0,
            ctrl_rate: 100.0,
            substeps: 10,
            hybrid: None,
        }
    }
}

/// A failed run together with everything recorded before the failure.
#[derive(Debug)]
pub struct SimFailure {
    pub error: Error,
    pub partial: Trajectory,
}

impl std::fmt::Display for SimFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} ticks)", self.error, self.partial.len())
    }
}

impl std::error::Error for SimFailure {}

/// Integrates one sub-step, locating and applying any guard crossings.
fn advance(
    truth: &dyn ControlAffine,
    t0: f64,
    x0: &Vector,
    u: &Vector,
    h: f64,
    hybrid: Option<&HybridSpec>,
    events: &mut Vec<HybridEvent>,
) -> Result<Vector> {
    let mut t = t0;
    let mut x = x0.clone();
    let mut remaining = h;
    loop {
        let x_next = step_rk4(truth, t, &x, u, remaining)?;
        let Some(spec) = hybrid else {
            return Ok(x_next);
        };
        let g0 = (spec.guard)(&x);
        if !(g0 > 0.0 && (spec.guard)(&x_next) <= 0.0) {
            return Ok(x_next);
        }
        let (mut lo, mut hi) = (0.0, remaining);
        while hi - lo > EVENT_TIME_TOL {
            let mid = 0.5 * (lo + hi);
            if (spec.guard)(&step_rk4(truth, t, &x, u, mid)?) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let x_minus = step_rk4(truth, t, &x, u, hi)?;
        let x_plus = (spec.reset)(&x_minus);
        let t_event = t + hi;
        if events.len() >= spec.max_events {
            return Err(Error::TooManyEvents {
                max_events: spec.max_events,
                t: t_event,
            });
        }
        let g_plus = (spec.guard)(&x_plus);
        if !(g_plus > 0.0) {
            return Err(Error::Config(format!(
                "reset map left the state on the guard (guard = {g_plus:e}) at t = {t_event}"
            )));
        }
        events.push(HybridEvent {
            t: t_event,
            kind: spec.kind.clone(),
        });
        remaining -= hi;
        t = t_event;
        x = x_plus;
        if remaining <= 0.0 {
            return Ok(x);
        }
    }
}

/// Runs the sampled-data loop from `x0` until `cfg.t_end`.
///
/// At each tick the controller receives `truth.observe(x)` and the nominal
/// model; the returned input is held over `cfg.substeps` RK4 steps of the
/// truth model.
pub fn simulate(
    pair: &PlantPair,
    controller: &mut dyn Controller,
    x0: &Vector,
    cfg: &SimConfig,
) -> std::result::Result<Trajectory, Box<SimFailure>> {
    let fail = |error: Error, partial: Trajectory| Box::new(SimFailure { error, partial });
    let mut traj = Trajectory {
        final_state: x0.clone(),
        tick_period: 1.0 / cfg.ctrl_rate,
        ..Trajectory::default()
    };
    if !(cfg.ctrl_rate > 0.0) || cfg.substeps == 0 || !(cfg.t_end >= 0.0) {
        return Err(fail(
            Error::Config(format!(
                "invalid simulation settings: rate {} Hz, substeps {}, t_end {}",
                cfg.ctrl_rate, cfg.substeps, cfg.t_end
            )),
            traj,
        ));
    }
    if x0.len() != pair.truth.state_dim() {
        return Err(fail(
            Error::Dimension {
                context: "initial state",
                expected: pair.truth.state_dim().to_string(),
                got: x0.len().to_string(),
            },
            traj,
        ));
    }
    let period = 1.0 / cfg.ctrl_rate;
    let n_ticks = (cfg.t_end * cfg.ctrl_rate).round() as usize;
    let h = period / cfg.substeps as f64;
    let mut x = x0.clone();
    for k in 0..n_ticks {
        let t = k as f64 * period;
        let obs = pair.truth.observe(&x);
        let (u, diag) = match controller.control(t, &obs, pair.nominal.as_ref()) {
            Ok(out) => out,
            Err(e) => {
                traj.final_time = t;
                traj.final_state = x;
                return Err(fail(
                    Error::Controller {
                        tick: k,
                        source: Box::new(e),
                    },
                    traj,
                ));
            }
        };
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.observed.push(obs);
        traj.inputs.push(u.clone());
        traj.diagnostics.push(diag);
        for s in 0..cfg.substeps {
            let ts = t + s as f64 * h;
            match advance(
                pair.truth.as_ref(),
                ts,
                &x,
                &u,
                h,
                cfg.hybrid.as_ref(),
                &mut traj.events,
            ) {
                Ok(next) => x = next,
                Err(e) => {
                    traj.final_time = ts;
                    traj.final_state = x;
                    return Err(fail(e, traj));
                }
            }
        }
    }
    traj.final_time = n_ticks as f64 * period;
    traj.final_state = x;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::models::*;
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec())
    }

    #[test]
    fn rk4_zero_field_is_identity() {
        let still = LinearPlant::new(Mat::zeros(2, 2), Mat::zeros(2, 1));
        let x = v(&[0.3, -1.0]);
        assert_eq!(step_rk4(&still, 0.0, &x, &v(&[5.0]), 0.1).unwrap(), x);
    }

    #[test]
    fn rk4_exponential_decay() {
        let decay = LinearPlant::new(Mat::from_element(1, 1, -1.0), Mat::zeros(1, 1));
        let x = step_rk4(&decay, 0.0, &v(&[1.0]), &v(&[0.0]), 0.1).unwrap();
        assert!((x[0] - (-0.1_f64).exp()).abs() < 1e-7);
        assert_abs_diff_eq!(x[0], 0.904837, epsilon = 1e-6);
    }

    #[test]
    fn rk4_double_integrator_is_exact() {
        let di = LinearPlant::double_integrator();
        let x = step_rk4(&di, 0.0, &v(&[0.0, 0.0]), &v(&[1.0]), 0.1).unwrap();
        assert_abs_diff_eq!(x[0], 0.005, epsilon = 1e-16);
        assert_abs_diff_eq!(x[1], 0.1, epsilon = 1e-16);
    }

    #[test]
    fn rk4_rejects_bad_step_and_non_finite() {
        let di = LinearPlant::double_integrator();
        assert!(step_rk4(&di, 0.0, &v(&[0.0, 0.0]), &v(&[1.0]), 0.0).is_err());
        let blowup = LinearPlant::new(Mat::from_element(1, 1, 1e308), Mat::zeros(1, 1));
        let err = step_rk4(&blowup, 0.0, &v(&[10.0]), &v(&[0.0]), 1.0).unwrap_err();
        assert!(
            matches!(err, Error::NonFinite { ref last_finite, .. } if last_finite == &vec![10.0])
        );
    }

    #[test]
    fn rk4_converges_at_fourth_order_on_pendulum() {
        let p = Pendulum::new(1.0, 1.0, 0.1);
        let x0 = v(&[0.8, 0.0]);
        let u = v(&[0.0]);
        let horizon = 1.0;
        let run = |dt: f64| {
            let steps = (horizon / dt).round() as usize;
            let mut x = x0.clone();
            for k in 0..steps {
                x = step_rk4(&p, k as f64 * dt, &x, &u, dt).unwrap();
            }
            x
        };
        let reference = run(1e-4);
        let dts = [2e-2, 1e-2, 5e-3, 2.5e-3];
        let errs: Vec<f64> = dts
            .iter()
            .map(|&dt| (run(dt) - &reference).amax())
            .collect();
        for w in errs.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((3.8..=4.2).contains(&slope), "slope {slope} from {errs:?}");
        }
    }

    #[test]
    fn exact_pair_at_target_holds_state() {
        let pair = PlantPair::exact(Arc::new(SpringCart::nominal(0.75, 2.0, 0.02)));
        let mut ff = ConstantMu { mu: v(&[0.0]) };
        let cfg = SimConfig {
            t_end: 1.0,
            ..SimConfig::default()
        };
        let x0 = v(&[0.02, 0.0]);
        let traj = simulate(&pair, &mut ff, &x0, &cfg).unwrap();
        assert_eq!(traj.len(), 100);
        assert!((&traj.final_state - &x0).amax() < 1e-12);
        assert!(traj.inputs.iter().all(|u| u[0].abs() < 1e-12));
    }

    #[test]
    fn feedforward_on_mismatched_pair_leaves_tracking_error() {
        let pair = spring_cart(4, &SpringCartParams::default()).unwrap();
        let mut ff = ConstantMu { mu: v(&[0.0]) };
        let cfg = SimConfig {
            t_end: 2.0,
            ..SimConfig::default()
        };
        let traj = simulate(&pair, &mut ff, &v(&[0.02, 0.0, 0.0, 0.0]), &cfg).unwrap();
        let y_end = pair.nominal.output(&pair.truth.observe(&traj.final_state))[0];
        assert!(y_end.abs() > 1e-4, "tracking error {y_end}");
    }

    #[test]
    fn zero_order_hold_breakpoints_at_ticks() {
        let pair = PlantPair::exact(Arc::new(Pendulum::new(1.0, 1.0, 0.1)));
        let mut ff = ConstantMu { mu: v(&[-0.5]) };
        let cfg = SimConfig {
            t_end: 0.5,
            ctrl_rate: 100.0,
            substeps: 4,
            hybrid: None,
        };
        let traj = simulate(&pair, &mut ff, &v(&[0.3, 0.0]), &cfg).unwrap();
        for (k, t) in traj.times.iter().enumerate() {
            assert_abs_diff_eq!(*t, k as f64 * 0.01, epsilon = 1e-15);
        }
    }

    #[test]
    fn bouncing_mass_first_event_and_resets() {
        let (pair, hybrid) = bouncing_mass(&BouncingParams::default());
        let cfg = SimConfig {
            t_end: 1.2,
            ctrl_rate: 100.0,
            substeps: 10,
            hybrid: Some(hybrid.clone()),
        };
        let x0 = v(&[0.0, 0.0, 1.0, 0.0]);
        let mut zero = ZeroInput;
        let traj = simulate(&pair, &mut zero, &x0, &cfg).unwrap();
        let t1 = (2.0 / 9.81_f64).sqrt();
        assert!(!traj.events.is_empty());
        assert!((traj.events[0].t - t1).abs() < 1e-6, "{}", traj.events[0].t);
        // the second flight lasts twice the rebound rise time
        let rebound = 0.5 * (2.0 * 9.81_f64).sqrt();
        let t2 = t1 + 2.0 * rebound / 9.81;
        assert!((traj.events[1].t - t2).abs() < 1e-6);
        assert_eq!(traj.events.len(), 3);
    }

    #[test]
    fn bouncing_mass_rebound_speed_and_event_cap() {
        let (pair, hybrid) = bouncing_mass(&BouncingParams::default());
        let x_minus = v(&[0.0, 0.0, 0.0, -(2.0 * 9.81_f64).sqrt()]);
        let x_plus = (hybrid.reset)(&x_minus);
        assert_abs_diff_eq!(x_plus[3].abs(), 2.2147, epsilon = 1e-4);
        assert!((hybrid.guard)(&x_plus) > 0.0);

        let capped = HybridSpec {
            max_events: 1,
            ..hybrid
        };
        let cfg = SimConfig {
            t_end: 1.2,
            hybrid: Some(capped),
            ..SimConfig::default()
        };
        let err = simulate(&pair, &mut ZeroInput, &v(&[0.0, 0.0, 1.0, 0.0]), &cfg).unwrap_err();
        assert!(matches!(err.error, Error::TooManyEvents { .. }));
        assert_eq!(err.partial.events.len(), 1);
    }

    #[test]
    fn csv_has_expected_header_and_rows() {
        let pair = PlantPair::exact(Arc::new(Pendulum::new(1.0, 1.0, 0.1)));
        let cfg = SimConfig {
            t_end: 0.05,
            ..SimConfig::default()
        };
        let traj = simulate(&pair, &mut ZeroInput, &v(&[0.1, 0.0]), &cfg).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,x0,x1,u0,V,delta,d_eps,h,B,qp_status"
        );
        assert_eq!(lines.count(), 5);
    }
}
