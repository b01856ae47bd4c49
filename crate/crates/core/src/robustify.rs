//! Min-max robustification of the CLF, CBF and plant constraints.
//!
//! Each condition is written through a scalar virtual input `ν` as
//! `Ψ₀ + Δ1 + (1 + Δ2)ν ≤ slack`. It is affine in `(Δ1, Δ2)`, so requiring it
//! over the box `|Δ1| ≤ Δ1max`, `|Δ2| ≤ Δ2max` is the same as requiring it at
//! `Δ1 = Δ1max` and both extremes of `Δ2`: two linear rows plus one equality
//! that defines `ν` from the nominal model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::certify::{BarrierTerms, ClfTerms, ResClf, Row, Var};
use crate::error::{Error, Result};
use crate::matstack::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelBounds {
    pub d1_max: f64,
    pub d2_max: f64,
}

impl ChannelBounds {
    pub const ZERO: Self = Self {
        d1_max: 0.0,
        d2_max: 0.0,
    };

    pub fn validate(&self, channel: &str) -> Result<()> {
        if !(self.d1_max >= 0.0 && self.d1_max.is_finite()) {
            return Err(Error::InvalidBounds(format!(
                "{channel}: d1_max = {} must be finite and >= 0",
                self.d1_max
            )));
        }
        if !(self.d2_max >= 0.0 && self.d2_max < 1.0) {
            return Err(Error::InvalidBounds(format!(
                "{channel}: d2_max = {} must lie in [0, 1)",
                self.d2_max
            )));
        }
        Ok(())
    }
}

/// How the CLF's additive bound enters `Ψ₀`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum D1Mode {
    #[default]
    Constant,
    /// `‖2ηᵀP_ε[0; I]‖·Δ1max`
    StateScaled,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct UncertaintyBounds {
    pub clf: ChannelBounds,
    pub cbf: ChannelBounds,
    /// One entry per model-dependent constraint row. A single entry applies
    /// to every row; an empty list means zero bounds.
    pub constraints: Vec<ChannelBounds>,
    pub clf_d1_mode: D1Mode,
}

impl UncertaintyBounds {
    pub fn validated(self) -> Result<Self> {
        self.clf.validate("clf")?;
        self.cbf.validate("cbf")?;
        for (i, c) in self.constraints.iter().enumerate() {
            c.validate(&format!("constraint {i}"))?;
        }
        Ok(self)
    }

    pub fn constraint(&self, i: usize) -> ChannelBounds {
        match self.constraints.len() {
            0 => ChannelBounds::ZERO,
            1 => self.constraints[0],
            _ => self
                .constraints
                .get(i)
                .copied()
                .unwrap_or(ChannelBounds::ZERO),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    Clf,
    Cbf,
    Constraint(usize),
}

/// One robustified condition evaluated at the solved decision variables:
/// `margin(Δ1, Δ2) = ψ0 + Δ1 + (1 + Δ2)ν − slack(Δ2)`, where the slack
/// interpolates linearly between `slack_hi` at `Δ2 = +Δ2max` and `slack_lo`
/// at `Δ2 = −Δ2max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobustCondition {
    pub kind: ConditionKind,
    pub psi0_nominal: f64,
    pub bounds: ChannelBounds,
    pub virtual_input: f64,
    pub slack_hi: f64,
    pub slack_lo: f64,
}

impl RobustCondition {
    pub fn margin(&self, d1: f64, d2: f64) -> f64 {
        let s = if self.bounds.d2_max > 0.0 {
            d2 / self.bounds.d2_max
        } else {
            0.0
        };
        let slack = 0.5 * (1.0 + s) * self.slack_hi + 0.5 * (1.0 - s) * self.slack_lo;
        self.psi0_nominal + d1 + (1.0 + d2) * self.virtual_input - slack
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let (a, b) = (self.bounds.d1_max, self.bounds.d2_max);
        [(a, b), (a, -b), (-a, b), (-a, -b)]
    }
}

/// Inequality rows and coupling equalities produced for one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustRows {
    pub ineq_rows: Vec<Row>,
    pub coupling_eqs: Vec<Row>,
    pub labels: Vec<String>,
}

/// How many relaxation variables the CLF rows use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClfSlack {
    Strict,
    Single,
    /// `δ1` on the `1 + Δ2max` row, `δ2` on the `1 − Δ2max` row.
    Split,
}

fn pair_rows(name: &str, psi0_max: f64, d2: f64, nu: Var, slacks: [Option<Var>; 2]) -> Vec<Row> {
    [(1.0 + d2, "p", slacks[0]), (1.0 - d2, "n", slacks[1])]
        .into_iter()
        .map(|(psi1, tag, slack)| {
            let mut terms = vec![(nu, psi1)];
            if let Some(s) = slack {
                terms.push((s, -1.0));
            }
            Row::new(format!("{name}_{tag}"), terms, -psi0_max)
        })
        .collect()
}

/// Effective additive bound on the CLF channel at `η`.
pub fn clf_d1_effective(clf: &ResClf, eta: &Vector, bounds: &UncertaintyBounds) -> f64 {
    match bounds.clf_d1_mode {
        D1Mode::Constant => bounds.clf.d1_max,
        D1Mode::StateScaled => {
            let m = clf.outputs();
            let sel = clf.p_eps.columns(m, m);
            let w = (eta.transpose() * sel) * 2.0;
            w.norm() * bounds.clf.d1_max
        }
    }
}

/// Robust CLF rows over `(μ_v, δ)` with coupling `μ_v = L_ḡV μ`.
pub fn robust_clf_rows(
    clf: &ResClf,
    terms: &ClfTerms,
    eta: &Vector,
    bounds: &UncertaintyBounds,
    slack: ClfSlack,
) -> Result<RobustRows> {
    bounds.clf.validate("clf")?;
    let psi0_max = terms.lfv + clf.rate() * terms.v + clf_d1_effective(clf, eta, bounds);
    let slacks = match slack {
        ClfSlack::Strict => [None, None],
        ClfSlack::Single => [Some(Var::Delta(0)), Some(Var::Delta(0))],
        ClfSlack::Split => [Some(Var::Delta(0)), Some(Var::Delta(1))],
    };
    let ineq_rows = pair_rows("robust_clf", psi0_max, bounds.clf.d2_max, Var::MuV, slacks);
    let mut coupling = vec![(Var::MuV, 1.0)];
    coupling.extend(terms.lgv.iter().enumerate().map(|(i, c)| (Var::Mu(i), -c)));
    Ok(RobustRows {
        labels: ineq_rows.iter().map(|r| r.label.clone()).collect(),
        ineq_rows,
        coupling_eqs: vec![Row::new("mu_v", coupling, 0.0)],
    })
}

/// Robust CBF rows over `μ_b` with coupling `μ_b = L_fB + L_gB u`.
pub fn robust_cbf_rows(
    bt: &BarrierTerms,
    gamma: f64,
    bounds: &UncertaintyBounds,
) -> Result<RobustRows> {
    bounds.cbf.validate("cbf")?;
    if !(bt.h > 0.0) {
        return Err(Error::SafetyViolated { h: bt.h });
    }
    let psi0_max = bounds.cbf.d1_max - gamma * bt.h;
    let ineq_rows = pair_rows(
        "robust_cbf",
        psi0_max,
        bounds.cbf.d2_max,
        Var::MuB,
        [None, None],
    );
    let mut coupling = vec![(Var::MuB, 1.0)];
    coupling.extend(bt.lgb.iter().enumerate().map(|(i, c)| (Var::U(i), -c)));
    Ok(RobustRows {
        labels: ineq_rows.iter().map(|r| r.label.clone()).collect(),
        ineq_rows,
        coupling_eqs: vec![Row::new("mu_b", coupling, bt.lfb)],
    })
}

/// Robust rows for constraint `a_c·u ≤ b_c` over `μ_c` with coupling
/// `μ_c = a_c·u − b_c`.
pub fn robust_constraint_rows(
    index: usize,
    a_c: &[f64],
    b_c: f64,
    bounds: ChannelBounds,
) -> Result<RobustRows> {
    bounds.validate(&format!("constraint {index}"))?;
    let var = Var::MuC(index);
    let ineq_rows = pair_rows(
        &format!("robust_c{index}"),
        bounds.d1_max,
        bounds.d2_max,
        var,
        [None, None],
    );
    let mut coupling = vec![(var, 1.0)];
    coupling.extend(a_c.iter().enumerate().map(|(i, c)| (Var::U(i), -c)));
    Ok(RobustRows {
        labels: ineq_rows.iter().map(|r| r.label.clone()).collect(),
        ineq_rows,
        coupling_eqs: vec![Row::new(format!("mu_c{index}"), coupling, -b_c)],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginReport {
    /// Largest margin over the four box corners.
    pub corner_max: f64,
    /// Largest margin over the uniform interior draws.
    pub interior_max: f64,
    /// Largest margin over every sample, corners included.
    pub worst_margin: f64,
}

/// Evaluates the condition at the four corners and at `n_samples` uniform
/// draws from the uncertainty box.
pub fn sample_uncertainty_margin<R: Rng>(
    cond: &RobustCondition,
    n_samples: usize,
    rng: &mut R,
) -> MarginReport {
    let corner_max = cond
        .corners()
        .iter()
        .map(|&(a, b)| cond.margin(a, b))
        .fold(f64::NEG_INFINITY, f64::max);
    let (a, b) = (cond.bounds.d1_max, cond.bounds.d2_max);
    let draw = |rng: &mut R, lim: f64| {
        if lim > 0.0 {
            rng.random_range(-lim..=lim)
        } else {
            0.0
        }
    };
    let mut interior_max = f64::NEG_INFINITY;
    for _ in 0..n_samples {
        let d1 = draw(rng, a);
        let d2 = draw(rng, b);
        interior_max = interior_max.max(cond.margin(d1, d2));
    }
    MarginReport {
        corner_max,
        interior_max,
        worst_margin: corner_max.max(interior_max),
    }
}
