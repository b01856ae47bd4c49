//! Per-tick QP controllers: the CLF-QP family, their barrier-constrained
//! versions and the robust variants.
//!
//! The decision vector is `[u(m); μ(m); μ_v?; μ_b?; μ_c(k)?; δ(0..2)]`. The
//! IO map and the virtual-input couplings are equalities, so every variable
//! is an affine function of `r = [μ; δ]`. [`assemble`] returns the full
//! problem together with that map and the reduced problem in `r`, which is
//! what gets solved.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::certify::{self, ClfTerms, ReciprocalBarrier, ResClf, Row, Var};
use crate::error::{Error, Result};
use crate::iolin::{self, LieBundle};
use crate::matstack::{Mat, Vector};
use crate::plantsim::{ControlAffine, Controller};
use crate::qpcore::{QpOptions, QpProblem, QpSolution, QpSolver, QpStatus};
use crate::robustify::{self, ClfSlack, ConditionKind, RobustCondition, UncertaintyBounds};

/// Weight of the `uᵀu` regularizer.
pub const U_REGULARIZATION: f64 = 1e-10;
pub const DEFAULT_PENALTY: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    ClfQp,
    ClfQpConstraints,
    CbfClfQp,
    RobustClfQp,
    RobustClfQpConstraints,
    RobustCbfClfQpRobustConstraints,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::ClfQp,
        Variant::ClfQpConstraints,
        Variant::CbfClfQp,
        Variant::RobustClfQp,
        Variant::RobustClfQpConstraints,
        Variant::RobustCbfClfQpRobustConstraints,
    ];

    pub fn is_robust(self) -> bool {
        matches!(
            self,
            Variant::RobustClfQp
                | Variant::RobustClfQpConstraints
                | Variant::RobustCbfClfQpRobustConstraints
        )
    }

    /// The nominal controller a robust variant reduces to with zero bounds.
    pub fn nominal_counterpart(self) -> Variant {
        match self {
            Variant::RobustClfQp => Variant::ClfQp,
            Variant::RobustClfQpConstraints => Variant::ClfQpConstraints,
            Variant::RobustCbfClfQpRobustConstraints => Variant::CbfClfQp,
            v => v,
        }
    }

    /// Whether the CLF condition carries a relaxation.
    pub fn relaxed(self) -> bool {
        !matches!(self, Variant::ClfQp | Variant::RobustClfQp)
    }

    pub fn uses_cbf(self) -> bool {
        matches!(
            self,
            Variant::CbfClfQp | Variant::RobustCbfClfQpRobustConstraints
        )
    }

    pub fn uses_constraints(self) -> bool {
        self.relaxed()
    }
}

/// Plant constraints `A_c(x) u ≤ b_c(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantConstraint {
    /// `|u_i| ≤ u_max`. Model independent.
    Saturation { u_max: f64 },
    /// `|ÿ_i| ≤ a_max` through the nominal Lie derivatives. Model dependent.
    OutputAccel { a_max: f64 },
    /// Constant row `a·u ≤ b`.
    Linear {
        a: Vec<f64>,
        b: f64,
        model_independent: bool,
    },
}

/// One scalar constraint row on `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub a: Vec<f64>,
    pub b: f64,
    pub model_independent: bool,
    pub label: String,
}

impl PlantConstraint {
    pub fn rows(&self, bundle: &LieBundle) -> Vec<ConstraintRow> {
        let m = bundle.outputs();
        let unit = |i: usize, s: f64| {
            (0..m)
                .map(|j| if j == i { s } else { 0.0 })
                .collect::<Vec<_>>()
        };
        match self {
            Self::Saturation { u_max } => (0..m)
                .flat_map(|i| {
                    [(1.0, "hi"), (-1.0, "lo")].map(|(s, tag)| ConstraintRow {
                        a: unit(i, s),
                        b: *u_max,
                        model_independent: true,
                        label: format!("sat_u{i}_{tag}"),
                    })
                })
                .collect(),
            Self::OutputAccel { a_max } => (0..m)
                .flat_map(|i| {
                    [(1.0, "hi"), (-1.0, "lo")].map(|(s, tag)| ConstraintRow {
                        a: bundle.lglfy.row(i).iter().map(|c| s * c).collect(),
                        b: a_max - s * bundle.lf2y[i],
                        model_independent: false,
                        label: format!("accel_y{i}_{tag}"),
                    })
                })
                .collect(),
            Self::Linear {
                a,
                b,
                model_independent,
            } => vec![ConstraintRow {
                a: a.clone(),
                b: *b,
                model_independent: *model_independent,
                label: "linear".into(),
            }],
        }
    }
}

/// What to do when the QP has no solution or the state left the safe set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    #[default]
    ErrorStop,
    HoldLast,
    /// IO-linearizing `u` with `μ = −K_ε η`, clipped to any saturation.
    SaturatedIo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSpec {
    pub variant: Variant,
    pub clf: ResClf,
    pub cbf: Option<ReciprocalBarrier>,
    pub constraints: Vec<PlantConstraint>,
    pub bounds: Option<UncertaintyBounds>,
    pub p: f64,
    /// `(p1, p2)` switches the robust CLF to two relaxations.
    pub split_delta: Option<(f64, f64)>,
    pub fallback: FallbackPolicy,
}

impl ControllerSpec {
    pub fn new(variant: Variant, clf: ResClf) -> Self {
        Self {
            variant,
            clf,
            cbf: None,
            constraints: Vec::new(),
            bounds: None,
            p: DEFAULT_PENALTY,
            split_delta: None,
            fallback: FallbackPolicy::ErrorStop,
        }
    }

    pub fn with_cbf(mut self, cbf: ReciprocalBarrier) -> Self {
        self.cbf = Some(cbf);
        self
    }

    pub fn with_constraints(mut self, c: Vec<PlantConstraint>) -> Self {
        self.constraints = c;
        self
    }

    pub fn with_bounds(mut self, b: UncertaintyBounds) -> Self {
        self.bounds = Some(b);
        self
    }

    pub fn with_fallback(mut self, f: FallbackPolicy) -> Self {
        self.fallback = f;
        self
    }

    /// Same spec with the variant swapped for its nominal counterpart.
    pub fn nominal_counterpart(&self) -> Self {
        Self {
            variant: self.variant.nominal_counterpart(),
            bounds: None,
            split_delta: None,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.variant;
        if v.uses_cbf() != self.cbf.is_some() {
            return Err(Error::Config(format!(
                "{v:?} {} a barrier",
                if v.uses_cbf() {
                    "requires"
                } else {
                    "does not take"
                }
            )));
        }
        if !v.uses_constraints() && !self.constraints.is_empty() {
            return Err(Error::Config(format!(
                "{v:?} does not take plant constraints"
            )));
        }
        if v.is_robust() {
            match &self.bounds {
                Some(b) => {
                    b.clone().validated()?;
                }
                None => return Err(Error::Config(format!("{v:?} requires uncertainty bounds"))),
            }
        }
        if !(self.p > 0.0) {
            return Err(Error::Config(format!(
                "relaxation penalty must be positive, got {}",
                self.p
            )));
        }
        if let Some((p1, p2)) = self.split_delta {
            if !v.is_robust() || !v.relaxed() {
                return Err(Error::Config(format!("{v:?} has no split relaxation")));
            }
            if !(p1 > 0.0 && p2 > 0.0) {
                return Err(Error::Config(
                    "split relaxation penalties must be positive".into(),
                ));
            }
        }
        if let Some(cbf) = &self.cbf {
            if !(cbf.gamma > 0.0) {
                return Err(Error::Config(format!(
                    "barrier gain must be positive, got {}",
                    cbf.gamma
                )));
            }
        }
        Ok(())
    }

    fn delta_penalties(&self) -> Vec<f64> {
        if !self.variant.relaxed() {
            Vec::new()
        } else if let Some((p1, p2)) = self.split_delta {
            vec![p1, p2]
        } else {
            vec![self.p]
        }
    }
}

/// Per-tick record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TickDiagnostics {
    pub u: Vector,
    pub mu: Vector,
    pub mu_v: Option<f64>,
    pub mu_b: Option<f64>,
    pub mu_c: Vec<f64>,
    pub deltas: Vec<f64>,
    pub v_eps: f64,
    pub eta: Vector,
    pub h: Option<f64>,
    pub b_barrier: Option<f64>,
    pub qp_status: Option<QpStatus>,
    pub active_set: Vec<String>,
    /// Seconds spent in the QP solver.
    pub solve_time: f64,
    /// `V̇ + (c3/ε)V − δ` on the nominal model at the solution.
    pub clf_residual: Option<f64>,
    pub robust: Vec<RobustCondition>,
    pub fallback: bool,
    pub kkt_max: Option<f64>,
}

impl TickDiagnostics {
    /// Record for a controller that does not solve a QP.
    pub fn passive(u: Vector) -> Self {
        Self {
            mu: Vector::zeros(u.len()),
            u,
            v_eps: f64::NAN,
            ..Self::default()
        }
    }

    pub fn delta_max(&self) -> f64 {
        self.deltas.iter().copied().fold(0.0, f64::max)
    }

    /// Granted relaxation `d_ε = max(0, δ)`.
    pub fn d_eps(&self) -> f64 {
        self.delta_max().max(0.0)
    }
}

/// Decision-variable layout of an assembled problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub vars: Vec<Var>,
    index: BTreeMap<Var, usize>,
}

impl Layout {
    fn new(vars: Vec<Var>) -> Self {
        let index = vars.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        Self { vars, index }
    }

    pub fn index(&self, v: Var) -> Option<usize> {
        self.index.get(&v).copied()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.vars
            .iter()
            .map(|v| match v {
                Var::U(i) => format!("u{i}"),
                Var::Mu(i) => format!("mu{i}"),
                Var::MuV => "mu_v".into(),
                Var::MuB => "mu_b".into(),
                Var::MuC(i) => format!("mu_c{i}"),
                Var::Delta(i) => format!("delta{i}"),
            })
            .collect()
    }

    fn dense(&self, row: &Row) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (v, c) in &row.terms {
            out[self.index[v]] += c;
        }
        out
    }
}

/// Metadata for turning a solution into a [`RobustCondition`].
#[derive(Debug, Clone, PartialEq)]
struct ConditionTemplate {
    kind: ConditionKind,
    psi0_nominal: f64,
    bounds: robustify::ChannelBounds,
    virtual_var: Var,
    slack_hi: Option<Var>,
    slack_lo: Option<Var>,
}

/// A tick's QP: the full problem, the affine map `z = T r + t0` onto the
/// reduced variables `r = [μ; δ]` and the reduced problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub problem: QpProblem,
    pub layout: Layout,
    pub row_labels: Vec<String>,
    pub t_map: Mat,
    pub t0: Vector,
    pub reduced: QpProblem,
    /// Positive factor each reduced row was divided by.
    pub row_scale: Vec<f64>,
    pub bundle: LieBundle,
    pub clf_terms: ClfTerms,
    pub eta: Vector,
    pub h: Option<f64>,
    pub b_barrier: Option<f64>,
    templates: Vec<ConditionTemplate>,
}

impl Assembly {
    /// Full decision vector from reduced variables.
    pub fn expand(&self, r: &Vector) -> Vector {
        &self.t_map * r + &self.t0
    }

    pub fn value(&self, z: &Vector, v: Var) -> Option<f64> {
        self.layout.index(v).map(|i| z[i])
    }

    pub fn inputs(&self, z: &Vector) -> Vector {
        let m = self.bundle.outputs();
        z.rows(0, m).into_owned()
    }

    pub fn robust_conditions(&self, z: &Vector) -> Vec<RobustCondition> {
        let get = |v: Option<Var>| v.and_then(|v| self.value(z, v)).unwrap_or(0.0);
        self.templates
            .iter()
            .map(|t| RobustCondition {
                kind: t.kind,
                psi0_nominal: t.psi0_nominal,
                bounds: t.bounds,
                virtual_input: get(Some(t.virtual_var)),
                slack_hi: get(t.slack_hi),
                slack_lo: get(t.slack_lo),
            })
            .collect()
    }
}

/// Builds the tick QP at the observed state `x` from the nominal model.
pub fn assemble(
    spec: &ControllerSpec,
    x: &Vector,
    nominal: &dyn ControlAffine,
) -> Result<Assembly> {
    spec.validate()?;
    let bundle = iolin::lie_bundle(nominal, x)?;
    let m = bundle.outputs();
    if spec.clf.outputs() != m {
        return Err(Error::Dimension {
            context: "CLF outputs",
            expected: m.to_string(),
            got: spec.clf.outputs().to_string(),
        });
    }
    let eta = iolin::transverse(&bundle).eta;
    let terms = certify::clf_terms(&spec.clf, &eta);
    let variant = spec.variant;
    let robust = variant.is_robust();
    let zero_bounds = UncertaintyBounds::default();
    let bounds = spec.bounds.as_ref().unwrap_or(&zero_bounds);
    let penalties = spec.delta_penalties();

    let barrier = match (&spec.cbf, variant.uses_cbf()) {
        (Some(cbf), true) => Some(certify::barrier_terms(cbf, nominal, x)?),
        _ => None,
    };
    let mut plant_rows = Vec::new();
    if variant.uses_constraints() {
        for c in &spec.constraints {
            plant_rows.extend(c.rows(&bundle));
        }
    }
    for r in &plant_rows {
        if r.a.len() != m {
            return Err(Error::Dimension {
                context: "constraint row",
                expected: m.to_string(),
                got: r.a.len().to_string(),
            });
        }
    }

    let mut ineq: Vec<Row> = Vec::new();
    let mut couplings: Vec<Row> = Vec::new();
    let mut templates = Vec::new();
    let mut vars: Vec<Var> = (0..m).map(Var::U).chain((0..m).map(Var::Mu)).collect();

    if robust {
        let slack = match (variant.relaxed(), spec.split_delta.is_some()) {
            (false, _) => ClfSlack::Strict,
            (true, false) => ClfSlack::Single,
            (true, true) => ClfSlack::Split,
        };
        let rows = robustify::robust_clf_rows(&spec.clf, &terms, &eta, bounds, slack)?;
        vars.push(Var::MuV);
        templates.push(ConditionTemplate {
            kind: ConditionKind::Clf,
            psi0_nominal: terms.lfv + spec.clf.rate() * terms.v,
            bounds: robustify::ChannelBounds {
                d1_max: robustify::clf_d1_effective(&spec.clf, &eta, bounds),
                d2_max: bounds.clf.d2_max,
            },
            virtual_var: Var::MuV,
            slack_hi: rows.ineq_rows[0].terms.get(1).map(|t| t.0),
            slack_lo: rows.ineq_rows[1].terms.get(1).map(|t| t.0),
        });
        ineq.extend(rows.ineq_rows);
        couplings.extend(rows.coupling_eqs);
    } else {
        ineq.push(certify::clf_row(&spec.clf, &eta, variant.relaxed()));
    }

    if let (Some(bt), Some(cbf)) = (&barrier, &spec.cbf) {
        if robust {
            let rows = robustify::robust_cbf_rows(bt, cbf.gamma, bounds)?;
            vars.push(Var::MuB);
            templates.push(ConditionTemplate {
                kind: ConditionKind::Cbf,
                psi0_nominal: -cbf.gamma * bt.h,
                bounds: bounds.cbf,
                virtual_var: Var::MuB,
                slack_hi: None,
                slack_lo: None,
            });
            ineq.extend(rows.ineq_rows);
            couplings.extend(rows.coupling_eqs);
        } else {
            ineq.push(bt.row.clone());
        }
    }

    let mut k = 0;
    for r in &plant_rows {
        if robust && !r.model_independent {
            let cb = bounds.constraint(k);
            let rows = robustify::robust_constraint_rows(k, &r.a, r.b, cb)?;
            vars.push(Var::MuC(k));
            templates.push(ConditionTemplate {
                kind: ConditionKind::Constraint(k),
                psi0_nominal: 0.0,
                bounds: cb,
                virtual_var: Var::MuC(k),
                slack_hi: None,
                slack_lo: None,
            });
            ineq.extend(rows.ineq_rows.into_iter().map(|mut row| {
                row.label = format!("{}_{}", r.label, row.label);
                row
            }));
            couplings.extend(rows.coupling_eqs);
            k += 1;
        } else {
            let terms =
                r.a.iter()
                    .enumerate()
                    .map(|(i, c)| (Var::U(i), *c))
                    .collect();
            ineq.push(Row::new(r.label.clone(), terms, r.b));
        }
    }
    vars.extend((0..penalties.len()).map(Var::Delta));
    let layout = Layout::new(vars);
    let n = layout.len();

    // objective μᵀμ + Σ p_j δ_j² + 1e-10 uᵀu
    let mut h = Mat::zeros(n, n);
    for (i, v) in layout.vars.iter().enumerate() {
        h[(i, i)] = match v {
            Var::U(_) => 2.0 * U_REGULARIZATION,
            Var::Mu(_) => 2.0,
            Var::Delta(j) => 2.0 * penalties[*j],
            _ => 0.0,
        };
    }
    let mut problem = QpProblem::new(h, Vector::zeros(n)).with_names(layout.names());
    for row in &ineq {
        problem.push_ineq(&layout.dense(row), row.rhs);
    }

    // IO map u = u_ff + (LgLfy)⁻¹ μ
    let dinv = iolin::decoupling_inverse(&bundle)?;
    let u_ff = iolin::feedforward(&bundle)?;
    for i in 0..m {
        let mut terms = vec![(Var::U(i), 1.0)];
        terms.extend((0..m).map(|j| (Var::Mu(j), -dinv[(i, j)])));
        let row = Row::new(format!("io_{i}"), terms, u_ff[i]);
        problem.push_eq(&layout.dense(&row), row.rhs);
    }
    for row in &couplings {
        problem.push_eq(&layout.dense(row), row.rhs);
    }

    // affine parametrization z = T r + t0 with r = [μ; δ]
    let nd = penalties.len();
    let nr = m + nd;
    let mut t_map = Mat::zeros(n, nr);
    let mut t0 = Vector::zeros(n);
    for i in 0..m {
        let iu = layout.index(Var::U(i)).expect("u in layout");
        t0[iu] = u_ff[i];
        for j in 0..m {
            t_map[(iu, j)] = dinv[(i, j)];
        }
        t_map[(layout.index(Var::Mu(i)).expect("mu in layout"), i)] = 1.0;
    }
    for j in 0..nd {
        t_map[(layout.index(Var::Delta(j)).expect("delta in layout"), m + j)] = 1.0;
    }
    for row in &couplings {
        let (lead, one) = row.terms[0];
        debug_assert_eq!(one, 1.0);
        let il = layout.index(lead).expect("coupled variable in layout");
        let mut acc_row = Vector::zeros(nr);
        let mut acc0 = row.rhs;
        for (v, c) in &row.terms[1..] {
            let iv = layout.index(*v).expect("coupling operand in layout");
            acc_row -= t_map.row(iv).transpose() * *c;
            acc0 -= c * t0[iv];
        }
        t_map.set_row(il, &acc_row.transpose());
        t0[il] = acc0;
    }

    let ht = &problem.h * &t_map;
    let h_r = t_map.transpose() * &ht;
    let f_r = t_map.transpose() * (&problem.h * &t0);
    let mut reduced = QpProblem::new((&h_r + h_r.transpose()) * 0.5, f_r);
    reduced.var_names = (0..m)
        .map(|i| format!("mu{i}"))
        .chain((0..nd).map(|j| format!("delta{j}")))
        .collect();
    let a_r = &problem.a_ineq * &t_map;
    let b_r = &problem.b_ineq - &problem.a_ineq * &t0;
    let mut row_scale = Vec::with_capacity(a_r.nrows());
    for i in 0..a_r.nrows() {
        let norm = a_r.row(i).norm();
        let s = if norm > 1e-12 { norm } else { 1.0 };
        let scaled: Vec<f64> = a_r.row(i).iter().map(|c| c / s).collect();
        reduced.push_ineq(&scaled, b_r[i] / s);
        row_scale.push(s);
    }

    Ok(Assembly {
        problem,
        row_labels: ineq.iter().map(|r| r.label.clone()).collect(),
        layout,
        t_map,
        t0,
        reduced,
        row_scale,
        h: barrier.as_ref().map(|b| b.h),
        b_barrier: barrier.as_ref().map(|b| b.b),
        bundle,
        clf_terms: terms,
        eta,
        templates,
    })
}

fn diagnostics_from(
    spec: &ControllerSpec,
    asm: &Assembly,
    sol: &QpSolution,
    solve_time: f64,
) -> TickDiagnostics {
    let z = asm.expand(&sol.z);
    let m = asm.bundle.outputs();
    let mu = z.rows(m, m).into_owned();
    let deltas: Vec<f64> = asm
        .layout
        .vars
        .iter()
        .filter(|v| matches!(v, Var::Delta(_)))
        .map(|v| asm.value(&z, *v).unwrap())
        .collect();
    let mu_c = asm
        .layout
        .vars
        .iter()
        .filter(|v| matches!(v, Var::MuC(_)))
        .map(|v| asm.value(&z, *v).unwrap())
        .collect();
    let t = &asm.clf_terms;
    let clf_residual =
        t.lfv + t.lgv.dot(&mu) + spec.clf.rate() * t.v - deltas.iter().copied().fold(0.0, f64::max);
    TickDiagnostics {
        u: asm.inputs(&z),
        mu,
        mu_v: asm.value(&z, Var::MuV),
        mu_b: asm.value(&z, Var::MuB),
        mu_c,
        deltas,
        v_eps: t.v,
        eta: asm.eta.clone(),
        h: asm.h,
        b_barrier: asm.b_barrier,
        qp_status: Some(sol.status),
        active_set: sol
            .active_set
            .iter()
            .map(|&i| asm.row_labels[i].clone())
            .collect(),
        solve_time,
        clf_residual: Some(clf_residual),
        robust: asm.robust_conditions(&z),
        fallback: false,
        kkt_max: Some(sol.kkt.max()),
    }
}

/// Stateful controller for one simulation: owns the solver, the tick
/// counter and the last applied input.
#[derive(Debug, Clone)]
pub struct QpController {
    pub spec: ControllerSpec,
    solver: QpSolver,
    tick: usize,
    last_u: Option<Vector>,
    /// Assembly of the most recent tick, kept for debugging dumps.
    pub last_assembly: Option<Assembly>,
    pub keep_assembly: bool,
}

impl QpController {
    pub fn new(spec: ControllerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            solver: QpSolver::new(QpOptions::default()),
            tick: 0,
            last_u: None,
            last_assembly: None,
            keep_assembly: false,
        })
    }

    pub fn with_solver_options(mut self, options: QpOptions) -> Self {
        self.solver = QpSolver::new(options);
        self
    }

    fn fallback_input(&self, x: &Vector, nominal: &dyn ControlAffine) -> Result<Vector> {
        match self.spec.fallback {
            FallbackPolicy::ErrorStop => unreachable!("handled by caller"),
            FallbackPolicy::HoldLast => match &self.last_u {
                Some(u) => Ok(u.clone()),
                None => iolin::feedforward(&iolin::lie_bundle(nominal, x)?),
            },
            FallbackPolicy::SaturatedIo => {
                let b = iolin::lie_bundle(nominal, x)?;
                let eta = iolin::transverse(&b).eta;
                let mu = -self.spec.clf.scaled_gain() * eta;
                let mut u = iolin::io_control(&b, &mu)?;
                for c in &self.spec.constraints {
                    if let PlantConstraint::Saturation { u_max } = c {
                        u.apply(|v| *v = v.clamp(-u_max, *u_max));
                    }
                }
                Ok(u)
            }
        }
    }

    fn fail(
        &mut self,
        err: Error,
        x: &Vector,
        nominal: &dyn ControlAffine,
        mut diag: TickDiagnostics,
    ) -> Result<(Vector, TickDiagnostics)> {
        if self.spec.fallback == FallbackPolicy::ErrorStop {
            return Err(err);
        }
        let u = self.fallback_input(x, nominal)?;
        diag.u = u.clone();
        diag.fallback = true;
        self.last_u = Some(u.clone());
        Ok((u, diag))
    }

    /// Assembles, solves and extracts the input for one tick.
    pub fn step(
        &mut self,
        x: &Vector,
        nominal: &dyn ControlAffine,
    ) -> Result<(Vector, TickDiagnostics)> {
        let tick = self.tick;
        self.tick += 1;
        let asm = match assemble(&self.spec, x, nominal) {
            Ok(a) => a,
            Err(Error::SafetyViolated { h }) => {
                let mut diag = TickDiagnostics::passive(Vector::zeros(nominal.input_dim()));
                diag.h = Some(h);
                if let Ok(b) = iolin::lie_bundle(nominal, x) {
                    diag.eta = iolin::transverse(&b).eta;
                    diag.v_eps = self.spec.clf.value(&diag.eta);
                }
                return self.fail(Error::SafetyViolated { h }, x, nominal, diag);
            }
            Err(e) => return Err(e),
        };
        let start = Instant::now();
        let sol = self.solver.solve(&asm.reduced)?;
        let elapsed = start.elapsed().as_secs_f64();
        let diag = diagnostics_from(&self.spec, &asm, &sol, elapsed);
        if self.keep_assembly {
            self.last_assembly = Some(asm);
        }
        match sol.status {
            QpStatus::Optimal => {
                self.last_u = Some(diag.u.clone());
                Ok((diag.u.clone(), diag))
            }
            QpStatus::Infeasible => self.fail(Error::Infeasible { tick }, x, nominal, diag),
            QpStatus::IterationCap => self.fail(Error::IterationCap { tick }, x, nominal, diag),
        }
    }
}

impl Controller for QpController {
    fn control(
        &mut self,
        _t: f64,
        x: &Vector,
        nominal: &dyn ControlAffine,
    ) -> Result<(Vector, TickDiagnostics)> {
        self.step(x, nominal)
    }
}

/// One-shot control: fresh solver, no history.
pub fn control(
    spec: &ControllerSpec,
    x: &Vector,
    nominal: &dyn ControlAffine,
) -> Result<(Vector, TickDiagnostics)> {
    QpController::new(spec.clone())?.step(x, nominal)
}
