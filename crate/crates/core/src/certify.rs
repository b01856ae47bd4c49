//! Certificates: rapidly exponentially stabilizing CLFs, reciprocal barriers
//! and the relaxation monitor that tracks how much CLF slack a run consumed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matstack::{self, Mat, Vector};
use crate::plantsim::ControlAffine;

/// Decision variables a constraint row can refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    U(usize),
    Mu(usize),
    MuV,
    MuB,
    MuC(usize),
    Delta(usize),
}

/// Sparse linear row `Σ coeff·var ≤ rhs` (or `= rhs` when used as a coupling).
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub terms: Vec<(Var, f64)>,
    pub rhs: f64,
    pub label: String,
}

impl Row {
    pub fn new(label: impl Into<String>, terms: Vec<(Var, f64)>, rhs: f64) -> Self {
        Self {
            terms,
            rhs,
            label: label.into(),
        }
    }

    pub fn coeff(&self, v: Var) -> f64 {
        self.terms
            .iter()
            .filter(|(w, _)| *w == v)
            .map(|(_, c)| c)
            .sum()
    }

    /// `lhs − rhs` at the given assignment.
    pub fn residual(&self, value: impl Fn(Var) -> f64) -> f64 {
        self.terms.iter().map(|(v, c)| c * value(*v)).sum::<f64>() - self.rhs
    }
}

/// Transverse dynamics `η̇ = F η + G μ` for `m` double integrators.
pub fn transverse_matrices(m: usize) -> (Mat, Mat) {
    let mut f = Mat::zeros(2 * m, 2 * m);
    let mut g = Mat::zeros(2 * m, m);
    for i in 0..m {
        f[(i, m + i)] = 1.0;
        g[(m + i, i)] = 1.0;
    }
    (f, g)
}

/// `V_ε(η) = ηᵀ P_ε η` with `P_ε = S P S`, `S = blkdiag(I/ε, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResClf {
    pub p_eps: Mat,
    pub p_base: Mat,
    pub q: Mat,
    pub eps: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub k_gain: Mat,
    f: Mat,
    g: Mat,
}

impl ResClf {
    pub fn outputs(&self) -> usize {
        self.g.ncols()
    }

    /// Exponential rate `c3/ε` demanded of `V_ε`.
    pub fn rate(&self) -> f64 {
        self.c3 / self.eps
    }

    pub fn value(&self, eta: &Vector) -> f64 {
        (eta.transpose() * &self.p_eps * eta)[(0, 0)]
    }

    /// Gain of the linear feedback `μ = −K_ε η` that the CLF certifies.
    pub fn scaled_gain(&self) -> Mat {
        let m = self.outputs();
        let mut k = self.k_gain.clone();
        for i in 0..m {
            for j in 0..m {
                k[(i, j)] /= self.eps * self.eps;
                k[(i, m + j)] /= self.eps;
            }
        }
        k
    }
}

/// Builds a RES-CLF for `m` outputs. Defaults: `K = [I, 2I]`, `Q = I`.
pub fn build_res_clf(m: usize, eps: f64, k_gain: Option<Mat>, q: Option<Mat>) -> Result<ResClf> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Config(format!("eps must lie in (0, 1], got {eps}")));
    }
    let (f, g) = transverse_matrices(m);
    let k = k_gain.unwrap_or_else(|| {
        let mut k = Mat::zeros(m, 2 * m);
        for i in 0..m {
            k[(i, i)] = 1.0;
            k[(i, m + i)] = 2.0;
        }
        k
    });
    if k.nrows() != m || k.ncols() != 2 * m {
        return Err(Error::Dimension {
            context: "CLF gain",
            expected: format!("{m}x{}", 2 * m),
            got: format!("{}x{}", k.nrows(), k.ncols()),
        });
    }
    let q = q.unwrap_or_else(|| Mat::identity(2 * m, 2 * m));
    let a_cl = &f - &g * &k;
    let p = matstack::solve_lyapunov(&a_cl, &q)?;
    let mut s = Mat::identity(2 * m, 2 * m);
    for i in 0..m {
        s[(i, i)] = 1.0 / eps;
    }
    let p_eps = &s * &p * &s;
    let (c1, c2) = matstack::eig_sym_extremes(&p)?;
    let (q_min, _) = matstack::eig_sym_extremes(&q)?;
    Ok(ResClf {
        p_eps: (&p_eps + p_eps.transpose()) * 0.5,
        p_base: p,
        q,
        eps,
        c1,
        c2,
        c3: q_min / c2,
        k_gain: k,
        f,
        g,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClfTerms {
    pub v: f64,
    pub lfv: f64,
    /// `L_ḡV_ε`, one entry per output.
    pub lgv: Vector,
}

/// `V_ε`, `L_f̄V_ε = ηᵀ(FᵀP_ε + P_εF)η` and `L_ḡV_ε = 2ηᵀP_εG`.
pub fn clf_terms(clf: &ResClf, eta: &Vector) -> ClfTerms {
    let pe = &clf.p_eps * eta;
    let lfv = 2.0 * (eta.transpose() * clf.f.transpose() * &pe)[(0, 0)];
    let lgv = (clf.g.transpose() * &pe) * 2.0;
    ClfTerms {
        v: eta.dot(&pe),
        lfv,
        lgv,
    }
}

/// `L_ḡV μ − δ ≤ −L_f̄V − (c3/ε)V`. Without relaxation the δ term is
/// dropped.
pub fn clf_row(clf: &ResClf, eta: &Vector, relaxed: bool) -> Row {
    let t = clf_terms(clf, eta);
    let mut terms: Vec<(Var, f64)> = t
        .lgv
        .iter()
        .enumerate()
        .map(|(i, c)| (Var::Mu(i), *c))
        .collect();
    if relaxed {
        terms.push((Var::Delta(0), -1.0));
    }
    Row::new("clf", terms, -t.lfv - clf.rate() * t.v)
}

/// Safety functions with closed-form gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SafetyFunction {
    Constant {
        value: f64,
    },
    /// `h = −a·q̇ + α(c − a·q)` for a state laid out as `[q; q̇]`, the
    /// relative-degree-two lift of `h₀ = c − a·q`.
    Lifted {
        a: Vec<f64>,
        c: f64,
        alpha: f64,
    },
}

impl SafetyFunction {
    pub fn h(&self, x: &Vector) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Lifted { a, c, alpha } => {
                let k = a.len();
                let aq: f64 = a.iter().zip(x.iter()).map(|(ai, xi)| ai * xi).sum();
                let av: f64 = a
                    .iter()
                    .zip(x.rows(k, k).iter())
                    .map(|(ai, xi)| ai * xi)
                    .sum();
                -av + alpha * (c - aq)
            }
        }
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        match self {
            Self::Constant { .. } => Vector::zeros(x.len()),
            Self::Lifted { a, alpha, .. } => {
                let k = a.len();
                let mut g = Vector::zeros(x.len());
                for (i, ai) in a.iter().enumerate() {
                    g[i] = -alpha * ai;
                    g[k + i] = -ai;
                }
                g
            }
        }
    }
}

/// Position constraint `a·q ≤ c` lifted to `h = ḣ₀ + α h₀`.
pub fn rd2_lift(a: &[f64], c: f64, alpha: f64) -> Result<SafetyFunction> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!(
            "lift rate must be positive, got {alpha}"
        )));
    }
    Ok(SafetyFunction::Lifted {
        a: a.to_vec(),
        c,
        alpha,
    })
}

/// `B = 1/h` with condition `Ḃ ≤ γ/B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReciprocalBarrier {
    pub h: SafetyFunction,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierTerms {
    pub h: f64,
    pub b: f64,
    pub lfb: f64,
    pub lgb: Vector,
    /// `L_gB u ≤ γ/B − L_fB`
    pub row: Row,
}

/// Barrier value, Lie derivatives and QP row under `model`.
pub fn barrier_terms(
    cbf: &ReciprocalBarrier,
    model: &dyn ControlAffine,
    x: &Vector,
) -> Result<BarrierTerms> {
    let h = cbf.h.h(x);
    if !(h > 0.0) {
        return Err(Error::SafetyViolated { h });
    }
    let grad = cbf.h.gradient(x);
    let scale = -1.0 / (h * h);
    let lfb = scale * grad.dot(&model.drift(x));
    let lgb = (model.input_field(x).transpose() * &grad) * scale;
    let terms = lgb
        .iter()
        .enumerate()
        .map(|(i, c)| (Var::U(i), *c))
        .collect();
    let row = Row::new("cbf", terms, cbf.gamma * h - lfb);
    Ok(BarrierTerms {
        h,
        b: 1.0 / h,
        lfb,
        lgb,
        row,
    })
}

/// Relaxation consumed between two hybrid events.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRelaxation {
    pub t_event: f64,
    /// `w_ε(T_I)`: relaxation accumulated over the step that just ended.
    pub w_step: f64,
    pub w_total: f64,
}

/// Running `w_ε(t) = ∫ d_ε/V_ε dt` with `d_ε = max(0, V̇ + (c3/ε)V_ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxMonitor {
    pub w: f64,
    pub w_bar: f64,
    pub v0: f64,
    pub eta0_norm: f64,
    pub rate: f64,
    pub v_floor: f64,
    pub per_step_log: Vec<StepRelaxation>,
    w_at_last_event: f64,
}

impl RelaxMonitor {
    pub const V_FLOOR: f64 = 1e-9;

    pub fn new(clf: &ResClf, eta0: &Vector, w_bar: f64) -> Self {
        Self {
            w: 0.0,
            w_bar,
            v0: clf.value(eta0),
            eta0_norm: eta0.norm(),
            rate: clf.rate(),
            v_floor: Self::V_FLOOR,
            per_step_log: Vec::new(),
            w_at_last_event: 0.0,
        }
    }

    pub fn exceeded(&self) -> bool {
        self.w > self.w_bar
    }

    /// Rectangle-rule accumulation of `d_ε/V_ε` over `dt`.
    pub fn monitor_update(&mut self, v_eps: f64, vdot_measured: f64, dt: f64) {
        if !(v_eps > self.v_floor) {
            return;
        }
        let d_eps = (vdot_measured + self.rate * v_eps).max(0.0);
        self.w += d_eps / v_eps * dt;
    }

    /// Logs `w_ε(T_I)` for the step ending at a hybrid event.
    pub fn record_event(&mut self, t_event: f64) {
        self.per_step_log.push(StepRelaxation {
            t_event,
            w_step: self.w - self.w_at_last_event,
            w_total: self.w,
        });
        self.w_at_last_event = self.w;
    }
}

/// Accumulates the monitor along sampled `V_ε` values, using the forward
/// difference over each tick as the measured `V̇`. Hybrid events are logged
/// at the first tick at or after their time; events past the last tick are
/// logged with the final value.
pub fn monitor_run(
    clf: &ResClf,
    eta0: &Vector,
    w_bar: f64,
    times: &[f64],
    v: &[f64],
    events: &[f64],
) -> (RelaxMonitor, Vec<f64>) {
    let mut mon = RelaxMonitor::new(clf, eta0, w_bar);
    let mut w_log = Vec::with_capacity(v.len());
    let mut next_event = 0;
    for k in 0..v.len() {
        if k > 0 {
            let dt = times[k] - times[k - 1];
            mon.monitor_update(v[k - 1], (v[k] - v[k - 1]) / dt, dt);
        }
        while next_event < events.len() && events[next_event] <= times[k] {
            mon.record_event(events[next_event]);
            next_event += 1;
        }
        w_log.push(mon.w);
    }
    for &t in &events[next_event..] {
        mon.record_event(t);
    }
    (mon, w_log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub holds: bool,
    /// `V_ε(t) − e^{−(c3/ε)t + w}V_ε(0)`; nonpositive when the V-form holds.
    pub v_margin: f64,
    /// `‖η(t)‖ − √(c2/c1)(1/ε)e^{w̄/2}e^{−c3t/(2ε)}‖η(0)‖`.
    pub eta_margin: f64,
}

pub const BOUND_REL_TOL: f64 = 1e-6;

/// Checks both exponential bounds at time `t` with the monitor's current
/// `w` (V-form) and its cap `w̄` (η-form), with relative tolerance
/// [`BOUND_REL_TOL`].
pub fn theorem1_bound_check(
    mon: &RelaxMonitor,
    clf: &ResClf,
    eta_t: &Vector,
    t: f64,
) -> BoundCheck {
    let v_t = clf.value(eta_t);
    let v_bound = (-clf.rate() * t + mon.w).exp() * mon.v0;
    let eta_bound = (clf.c2 / clf.c1).sqrt() / clf.eps
        * (mon.w_bar / 2.0).exp()
        * (-clf.rate() * t / 2.0).exp()
        * mon.eta0_norm;
    let eta_n = eta_t.norm();
    BoundCheck {
        holds: v_t <= v_bound * (1.0 + BOUND_REL_TOL) && eta_n <= eta_bound * (1.0 + BOUND_REL_TOL),
        v_margin: v_t - v_bound,
        eta_margin: eta_n - eta_bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plantsim::models::SpringCart;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec())
    }

    #[test]
    fn res_clf_examples() {
        let clf = build_res_clf(1, 1.0, None, None).unwrap();
        let p = Mat::from_row_slice(2, 2, &[1.5, 0.5, 0.5, 0.5]);
        assert_abs_diff_eq!(clf.p_eps, p, epsilon = 1e-12);
        assert_abs_diff_eq!(clf.c1, 1.0 - 0.5_f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(clf.c2, 1.0 + 0.5_f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(clf.c3, 1.0 / (1.0 + 0.5_f64.sqrt()), epsilon = 1e-12);

        let half = build_res_clf(1, 0.5, None, None).unwrap();
        assert_abs_diff_eq!(
            half.p_eps,
            Mat::from_row_slice(2, 2, &[6.0, 1.0, 1.0, 0.5]),
            epsilon = 1e-12
        );
        assert_eq!(half.value(&v(&[0.0, 0.0])), 0.0);
    }

    #[test]
    fn res_clf_rejects_bad_inputs() {
        assert!(build_res_clf(1, 0.0, None, None).is_err());
        assert!(build_res_clf(1, 1.5, None, None).is_err());
        let destabilizing = Mat::from_row_slice(1, 2, &[-1.0, 2.0]);
        assert!(matches!(
            build_res_clf(1, 1.0, Some(destabilizing), None),
            Err(Error::NotHurwitz { .. })
        ));
    }

    #[test]
    fn clf_terms_examples() {
        let clf = build_res_clf(1, 1.0, None, None).unwrap();
        let zero = clf_terms(&clf, &v(&[0.0, 0.0]));
        assert_eq!((zero.v, zero.lfv, zero.lgv[0]), (0.0, 0.0, 0.0));

        // FᵀP + PF = [[0, 1.5], [1.5, 1]] for the P above
        let t = clf_terms(&clf, &v(&[1.0, 0.0]));
        assert_abs_diff_eq!(t.v, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(t.lfv, 0.0, epsilon = 1e-12);
        let t = clf_terms(&clf, &v(&[1.0, 1.0]));
        assert_abs_diff_eq!(t.lfv, 4.0, epsilon = 1e-12);
        let t = clf_terms(&clf, &v(&[0.0, 1.0]));
        assert_abs_diff_eq!(t.lgv[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn clf_terms_match_finite_difference_of_v() {
        let clf = build_res_clf(2, 0.5, None, None).unwrap();
        let (f, g) = transverse_matrices(2);
        let eta = v(&[0.3, -0.2, 0.5, 0.1]);
        let mu = v(&[0.7, -1.1]);
        let t = clf_terms(&clf, &eta);
        let vdot = t.lfv + t.lgv.dot(&mu);
        let rate = &f * &eta + &g * &mu;
        let h = 1e-6;
        let fd = (clf.value(&(&eta + &rate * h)) - clf.value(&(&eta - &rate * h))) / (2.0 * h);
        assert_abs_diff_eq!(vdot, fd, epsilon = 1e-8);
    }

    #[test]
    fn clf_row_composition() {
        let clf = build_res_clf(1, 0.5, None, None).unwrap();
        let zero = clf_row(&clf, &v(&[0.0, 0.0]), true);
        assert_eq!(zero.coeff(Var::Mu(0)), 0.0);
        assert_eq!(zero.coeff(Var::Delta(0)), -1.0);
        assert_eq!(zero.rhs, 0.0);
        let eta = v(&[0.2, -0.4]);
        let strict = clf_row(&clf, &eta, false);
        assert_eq!(strict.coeff(Var::Delta(0)), 0.0);
        let t = clf_terms(&clf, &eta);
        assert_eq!(strict.coeff(Var::Mu(0)), t.lgv[0]);
        assert_abs_diff_eq!(strict.rhs, -t.lfv - clf.rate() * t.v, epsilon = 1e-15);
    }

    #[test]
    fn linear_feedback_meets_the_strict_condition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for eps in [1.0, 0.5, 0.2] {
            let clf = build_res_clf(2, eps, None, None).unwrap();
            let k = clf.scaled_gain();
            for _ in 0..200 {
                let eta = Vector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
                let row = clf_row(&clf, &eta, false);
                let mu = -&k * &eta;
                assert!(row.residual(|var| if let Var::Mu(i) = var { mu[i] } else { 0.0 }) <= 1e-9);
            }
        }
    }

    #[test]
    fn sandwich_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for eps in [1.0, 0.5, 0.2] {
            for m in [1, 2] {
                let clf = build_res_clf(m, eps, None, None).unwrap();
                for _ in 0..1000 {
                    let eta = Vector::from_fn(2 * m, |_, _| rng.random_range(-2.0..2.0));
                    let n2 = eta.norm_squared();
                    let val = clf.value(&eta);
                    assert!(clf.c1 * n2 <= val * (1.0 + 1e-12));
                    assert!(val <= clf.c2 / (eps * eps) * n2 * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn barrier_examples() {
        let cart = SpringCart::nominal(0.75, 2.0, 0.02);
        let constant = ReciprocalBarrier {
            h: SafetyFunction::Constant { value: 1.0 },
            gamma: 1.0,
        };
        let t = barrier_terms(&constant, &cart, &v(&[0.0, 0.0])).unwrap();
        assert_eq!((t.h, t.b, t.lfb, t.lgb[0]), (1.0, 1.0, 0.0, 0.0));
        assert_eq!(t.row.rhs, 1.0);

        let alpha = 5.0;
        let lifted = ReciprocalBarrier {
            h: rd2_lift(&[1.0], 0.01, alpha).unwrap(),
            gamma: 1.0,
        };
        let t = barrier_terms(&lifted, &cart, &v(&[0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(t.h, 0.01 * alpha, epsilon = 1e-15);
        assert_abs_diff_eq!(t.b, 100.0 / alpha, epsilon = 1e-12);
        // ∂h/∂x = (−α, −1), g = (0, 1/m) ⇒ L_gB = (1/m)/h²
        assert_abs_diff_eq!(t.lgb[0], 1.0 / 0.75 / (t.h * t.h), epsilon = 1e-9);

        let far = barrier_terms(&lifted, &cart, &v(&[-1.0, 0.0])).unwrap();
        assert!(far.lgb[0].abs() < t.lgb[0].abs() * 1e-3);

        assert!(matches!(
            barrier_terms(&lifted, &cart, &v(&[0.01, 0.0])),
            Err(Error::SafetyViolated { .. })
        ));
    }

    #[test]
    fn lift_examples() {
        let h = rd2_lift(&[1.0], 0.01, 5.0).unwrap();
        assert_abs_diff_eq!(h.h(&v(&[0.0, 0.3])), -0.3 + 0.05, epsilon = 1e-15);
        assert_eq!(h.h(&v(&[0.01, 0.0])), 0.0);
        let x = v(&[-0.02, 0.1]);
        let lo = rd2_lift(&[1.0], 0.01, 2.0).unwrap().h(&x);
        let hi = rd2_lift(&[1.0], 0.01, 8.0).unwrap().h(&x);
        assert!(hi > lo);
        assert!(rd2_lift(&[1.0], 0.01, 0.0).is_err());
    }

    #[test]
    fn barrier_row_matches_directional_derivative() {
        let cart = SpringCart::nominal(0.75, 2.0, 0.02);
        let cbf = ReciprocalBarrier {
            h: rd2_lift(&[1.0], 0.01, 5.0).unwrap(),
            gamma: 1.0,
        };
        let x = v(&[-0.01, 0.05]);
        let u = v(&[0.4]);
        let t = barrier_terms(&cbf, &cart, &x).unwrap();
        let xdot = cart.drift(&x) + cart.input_field(&x) * &u;
        let s = 1e-7;
        let bdot =
            (1.0 / cbf.h.h(&(&x + &xdot * s)) - 1.0 / cbf.h.h(&(&x - &xdot * s))) / (2.0 * s);
        assert_abs_diff_eq!(
            bdot,
            t.lfb + t.lgb[0] * u[0],
            epsilon = 1e-6 * bdot.abs().max(1.0)
        );
    }

    #[test]
    fn monitor_examples() {
        let clf = build_res_clf(1, 1.0, None, None).unwrap();
        let eta0 = v(&[1.0, 0.0]);
        let mut mon = RelaxMonitor::new(&clf, &eta0, 1.0);
        for _ in 0..200 {
            mon.monitor_update(1.0, -clf.rate(), 0.01);
        }
        assert_eq!(mon.w, 0.0);

        // d/V = 0.1 constant over 2 s
        let mut mon = RelaxMonitor::new(&clf, &eta0, 1.0);
        for _ in 0..200 {
            mon.monitor_update(2.0, 0.2 - clf.rate() * 2.0, 0.01);
        }
        assert_abs_diff_eq!(mon.w, 0.2, epsilon = 1e-12);

        // below the floor nothing accumulates
        mon.monitor_update(1e-12, 1.0, 1.0);
        assert_abs_diff_eq!(mon.w, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn monitor_integrates_known_profile() {
        // V(t) = exp(−r t + a(1 − cos t)) has d/V = a·sin t where positive
        let clf = build_res_clf(1, 0.5, None, None).unwrap();
        let r = clf.rate();
        let a = 0.3;
        let dt = 1e-4;
        let n = (2.0 * std::f64::consts::PI / dt) as usize;
        let mut mon = RelaxMonitor::new(&clf, &v(&[1.0, 0.0]), 10.0);
        for k in 0..n {
            let t = (k as f64 + 0.5) * dt;
            let val = (-r * t + a * (1.0 - t.cos())).exp();
            let vdot = val * (-r + a * t.sin());
            mon.monitor_update(val, vdot, dt);
        }
        // ∫₀^{2π} a·max(0, sin t) dt = 2a
        assert_abs_diff_eq!(mon.w, 2.0 * a, epsilon = 1e-4);
    }

    #[test]
    fn bound_check_examples() {
        let clf = build_res_clf(1, 0.5, None, None).unwrap();
        let zero = v(&[0.0, 0.0]);
        let mon = RelaxMonitor::new(&clf, &zero, 0.0);
        assert!(theorem1_bound_check(&mon, &clf, &zero, 3.0).holds);

        let eta0 = v(&[0.4, -0.1]);
        let mon = RelaxMonitor::new(&clf, &eta0, 0.0);
        let inside = &eta0 * (-clf.rate() * 0.5).exp();
        assert!(theorem1_bound_check(&mon, &clf, &inside, 1.0).holds);
        assert!(!theorem1_bound_check(&mon, &clf, &eta0, 1.0).holds);
    }

    #[test]
    fn sampled_monitor_makes_the_v_bound_exact_at_ticks() {
        let clf = build_res_clf(1, 0.5, None, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let times: Vec<f64> = (0..300).map(|k| k as f64 * 0.01).collect();
        let mut vals = vec![1.0];
        for _ in 1..times.len() {
            let last = *vals.last().unwrap();
            vals.push(last * (1.0 + rng.random_range(-0.05..0.04)));
        }
        let (mon, w) = monitor_run(&clf, &v(&[1.0, 0.0]), 0.0, &times, &vals, &[]);
        for k in 0..times.len() {
            let bound = (-clf.rate() * times[k] + w[k]).exp() * mon.v0;
            assert!(vals[k] <= bound * (1.0 + 1e-12), "tick {k}");
        }
    }
}
