//! Dense convex QP solver used point-wise in time by every controller.
//!
//! Solves
//!
//! ```text
//!   minimize    ½ zᵀ H z + fᵀ z
//!   subject to  A z ≤ b,  E z = d
//! ```
//!
//! Equality constraints are eliminated first through a null-space basis of
//! `E` (from an SVD), which leaves a strictly convex inequality-constrained
//! problem in the reduced coordinates. That problem is solved with a dual
//! active-set iteration in the style of Goldfarb and Idnani: start from the
//! unconstrained minimizer, repeatedly add the most violated inequality and
//! move along the primal/dual step until it is satisfied, dropping active
//! constraints whose multipliers would turn negative. Each step solves the
//! KKT system of the current working set with a dense LU; at controller scale
//! (a few dozen variables at most) that is cheap and avoids update bookkeeping.
//! The final working set is re-solved once with a null-space method, which
//! keeps active rows tight when heavy relaxation penalties make the
//! multipliers large.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::SVD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matstack::{is_positive_definite, max_abs, Mat, Vector};

/// Dense QP data. `h` must be symmetric; the reduced Hessian (after
/// eliminating equalities) must be positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: Mat,
    pub f_lin: Vector,
    pub a_ineq: Mat,
    pub b_ineq: Vector,
    pub a_eq: Mat,
    pub b_eq: Vector,
    pub var_names: Vec<String>,
}

impl QpProblem {
    /// Problem with no constraints; add rows with [`QpProblem::push_ineq`] and
    /// [`QpProblem::push_eq`].
    pub fn new(h: Mat, f_lin: Vector) -> Self {
        let n = f_lin.len();
        Self {
            h,
            f_lin,
            a_ineq: Mat::zeros(0, n),
            b_ineq: Vector::zeros(0),
            a_eq: Mat::zeros(0, n),
            b_eq: Vector::zeros(0),
            var_names: (0..n).map(|i| format!("z{i}")).collect(),
        }
    }

    pub fn with_names(mut self, names: Vec<String>) -> Self {
        self.var_names = names;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.f_lin.len()
    }

    pub fn push_ineq(&mut self, row: &[f64], rhs: f64) {
        push_row(&mut self.a_ineq, &mut self.b_ineq, row, rhs);
    }

    pub fn push_eq(&mut self, row: &[f64], rhs: f64) {
        push_row(&mut self.a_eq, &mut self.b_eq, row, rhs);
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.f_lin.dot(z)
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let dims_ok = self.h.nrows() == n
            && self.h.ncols() == n
            && self.a_ineq.ncols() == n
            && self.a_ineq.nrows() == self.b_ineq.len()
            && self.a_eq.ncols() == n
            && self.a_eq.nrows() == self.b_eq.len();
        if !dims_ok {
            return Err(Error::Dimension {
                context: "QpProblem",
                expected: format!("{n} variables throughout"),
                got: format!(
                    "h {}x{}, a_ineq {}x{} / b {}, a_eq {}x{} / d {}",
                    self.h.nrows(),
                    self.h.ncols(),
                    self.a_ineq.nrows(),
                    self.a_ineq.ncols(),
                    self.b_ineq.len(),
                    self.a_eq.nrows(),
                    self.a_eq.ncols(),
                    self.b_eq.len()
                ),
            });
        }
        let finite = self.h.iter().all(|v| v.is_finite())
            && self.f_lin.iter().all(|v| v.is_finite())
            && self.a_ineq.iter().all(|v| v.is_finite())
            && self.b_ineq.iter().all(|v| v.is_finite())
            && self.a_eq.iter().all(|v| v.is_finite())
            && self.b_eq.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config(
                "QpProblem contains non-finite entries".into(),
            ));
        }
        let asym = crate::matstack::asymmetry(&self.h);
        if asym > 1e-12 * max_abs(&self.h).max(1.0) {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(())
    }
}

fn push_row(a: &mut Mat, b: &mut Vector, row: &[f64], rhs: f64) {
    let n = a.ncols();
    assert_eq!(
        row.len(),
        n,
        "constraint row length must equal the number of variables"
    );
    let r = a.nrows();
    let taken = std::mem::replace(a, Mat::zeros(0, 0));
    *a = taken.insert_row(r, 0.0);
    for (j, v) in row.iter().enumerate() {
        a[(r, j)] = *v;
    }
    let taken = std::mem::replace(b, Vector::zeros(0));
    *b = taken.push(rhs);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationCap,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::IterationCap => "iteration_cap",
        }
    }
}

/// Max-norm KKT residuals of a candidate primal/dual pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_ineq: f64,
    pub primal_eq: f64,
    pub dual_nonneg: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_ineq)
            .max(self.primal_eq)
            .max(self.dual_nonneg)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: Vector,
    pub ineq_multipliers: Vector,
    pub eq_multipliers: Vector,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    pub iterations: usize,
    /// Indices of the inequality rows in the final working set.
    pub active_set: Vec<usize>,
    /// For `Infeasible`: nonnegative row weights `y` with `yᵀA` vanishing on
    /// the equality null space and `yᵀb < 0` (a Farkas certificate).
    pub certificate: Option<Vector>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub max_iter: usize,
    /// Relative feasibility tolerance for adding a violated row.
    pub feas_tol: f64,
    pub warm_start: bool,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            feas_tol: 1e-12,
            warm_start: false,
        }
    }
}

/// Solver instance. Holds the previous working set when warm starting is
/// enabled, so one instance belongs to one control loop.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub options: QpOptions,
    last_active: Vec<usize>,
}

impl QpSolver {
    pub fn new(options: QpOptions) -> Self {
        Self {
            options,
            last_active: Vec::new(),
        }
    }

    pub fn solve(&mut self, p: &QpProblem) -> Result<QpSolution> {
        let hint = if self.options.warm_start {
            self.last_active.clone()
        } else {
            Vec::new()
        };
        let sol = solve_with(p, &self.options, &hint)?;
        if sol.status == QpStatus::Optimal {
            self.last_active = sol.active_set.clone();
        }
        Ok(sol)
    }
}

/// Solves `p` with default options and no warm start.
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    solve_with(p, &QpOptions::default(), &[])
}

struct Reduced {
    z_p: Vector,
    basis: Mat,
}

fn eliminate_equalities(p: &QpProblem) -> Result<Option<Reduced>> {
    let n = p.num_vars();
    let k = p.a_eq.nrows();
    if k == 0 {
        return Ok(Some(Reduced {
            z_p: Vector::zeros(n),
            basis: Mat::identity(n, n),
        }));
    }
    // pad to at least n rows so the SVD returns a full right basis
    let rows = k.max(n);
    let mut padded = Mat::zeros(rows, n);
    padded.view_mut((0, 0), (k, n)).copy_from(&p.a_eq);
    let svd = SVD::new(padded, true, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let smax = svd.singular_values.max();
    let tol = 1e-12 * smax.max(1.0) * n as f64;
    let null_cols: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] <= tol).collect();
    let basis = Mat::from_fn(n, null_cols.len(), |i, j| v_t[(null_cols[j], i)]);

    let mut d_pad = Vector::zeros(rows);
    d_pad.rows_mut(0, k).copy_from(&p.b_eq);
    let z_p = svd
        .solve(&d_pad, tol)
        .map_err(|e| Error::Singular(format!("equality pseudo-inverse: {e}")))?;
    let resid = (&p.a_eq * &z_p - &p.b_eq).amax();
    if resid > 1e-9 * (1.0 + p.b_eq.amax()) {
        return Ok(None);
    }
    Ok(Some(Reduced { z_p, basis }))
}

fn solve_with(p: &QpProblem, opts: &QpOptions, hint: &[usize]) -> Result<QpSolution> {
    p.validate()?;
    let n = p.num_vars();
    let m_in = p.a_ineq.nrows();

    let Some(red) = eliminate_equalities(p)? else {
        let z = Vector::zeros(n);
        let sol = QpSolution {
            ineq_multipliers: Vector::zeros(m_in),
            eq_multipliers: Vector::zeros(p.a_eq.nrows()),
            kkt: KktResiduals::default(),
            z,
            status: QpStatus::Infeasible,
            iterations: 0,
            active_set: Vec::new(),
            certificate: None,
        };
        return Ok(finish(p, sol));
    };

    let nb = red.basis.ncols();
    let h_r = {
        let h = red.basis.transpose() * &p.h * &red.basis;
        (&h + h.transpose()) * 0.5
    };
    let f_r = red.basis.transpose() * (&p.h * &red.z_p + &p.f_lin);
    let a_r = &p.a_ineq * &red.basis;
    let b_r = &p.b_ineq - &p.a_ineq * &red.z_p;

    if nb > 0 && !is_positive_definite(&h_r) {
        return Err(Error::NotPositiveDefinite(
            "reduced QP Hessian (problem is not strictly convex on the equality null space)".into(),
        ));
    }

    let dual = dual_active_set(&h_r, &f_r, &a_r, &b_r, opts, hint)?;
    let z = &red.z_p + &red.basis * &dual.w;
    let mut lam = Vector::zeros(m_in);
    for (&i, &l) in dual.active.iter().zip(dual.lam.iter()) {
        lam[i] = l;
    }
    let sol = QpSolution {
        z,
        ineq_multipliers: lam,
        eq_multipliers: Vector::zeros(p.a_eq.nrows()),
        status: dual.status,
        kkt: KktResiduals::default(),
        iterations: dual.iterations,
        active_set: dual.active,
        certificate: dual.certificate,
    };
    Ok(finish(p, sol))
}

/// Recovers equality multipliers from stationarity and fills the residuals.
fn finish(p: &QpProblem, mut sol: QpSolution) -> QpSolution {
    let k = p.a_eq.nrows();
    if k > 0 && sol.status == QpStatus::Optimal {
        let g = &p.h * &sol.z + &p.f_lin + p.a_ineq.transpose() * &sol.ineq_multipliers;
        let et = p.a_eq.transpose();
        let svd = SVD::new(et, true, true);
        if let Ok(nu) = svd.solve(&(-g), 1e-13) {
            sol.eq_multipliers = nu;
        }
    }
    sol.kkt = kkt_residuals(p, &sol);
    sol
}

struct DualResult {
    w: Vector,
    active: Vec<usize>,
    lam: Vec<f64>,
    status: QpStatus,
    iterations: usize,
    certificate: Option<Vector>,
}

fn kkt_step(h: &Mat, a: &Mat, active: &[usize], p_row: usize) -> Result<(Vector, Vector)> {
    let n = h.nrows();
    let k = active.len();
    let mut kkt = Mat::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    for (c, &i) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(j, n + c)] = a[(i, j)];
            kkt[(n + c, j)] = a[(i, j)];
        }
    }
    let mut rhs = Vector::zeros(n + k);
    for j in 0..n {
        rhs[j] = -a[(p_row, j)];
    }
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("working-set KKT matrix".into()))?;
    Ok((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
}

/// Re-solves the equality-constrained problem on the final working set with
/// a null-space method, so active rows hold to working precision even when
/// the multipliers are large.
fn polish(
    h: &Mat,
    f: &Vector,
    a: &Mat,
    b: &Vector,
    active: &[usize],
) -> Option<(Vector, Vec<f64>)> {
    let n = h.nrows();
    let k = active.len();
    if n == 0 || k > n {
        return None;
    }
    let mut at = Mat::zeros(n, n);
    let mut b_act = Vector::zeros(k);
    for (c, &i) in active.iter().enumerate() {
        at.column_mut(c).copy_from(&a.row(i).transpose());
        b_act[c] = b[i];
    }
    let qr = at.qr();
    let q = qr.q();
    let r = qr.r();
    let r1 = r.view((0, 0), (k, k)).into_owned();
    let q1 = q.columns(0, k).into_owned();
    let q2 = q.columns(k, n - k).into_owned();
    // A_act z = b_act  ⇔  R1ᵀ (Q1ᵀ z) = b_act
    let y = r1.transpose().solve_lower_triangular(&b_act)?;
    let z_p = &q1 * y;
    let z = if n > k {
        let h2 = q2.transpose() * h * &q2;
        let g2 = q2.transpose() * (h * &z_p + f);
        let v = h2.cholesky()?.solve(&(-g2));
        z_p + &q2 * v
    } else {
        z_p
    };
    // stationarity: H z + f + A_actᵀ λ = 0  ⇔  R1 λ = −Q1ᵀ(H z + f)
    let lam = r1.solve_upper_triangular(&(-(q1.transpose() * (h * &z + f))))?;
    if z.iter().chain(lam.iter()).any(|v| !v.is_finite()) {
        return None;
    }
    Some((z, lam.iter().copied().collect()))
}

fn dual_active_set(
    h: &Mat,
    f: &Vector,
    a: &Mat,
    b: &Vector,
    opts: &QpOptions,
    hint: &[usize],
) -> Result<DualResult> {
    let n = h.nrows();
    let m = a.nrows();
    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("reduced Hessian".into()))?;
    let mut w = if n > 0 {
        chol.solve(&(-f))
    } else {
        Vector::zeros(0)
    };
    let mut active: Vec<usize> = Vec::new();
    let mut lam: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut pending_hint: Vec<usize> = hint.iter().copied().filter(|&i| i < m).collect();

    let violation = |w: &Vector, i: usize| -> (f64, f64) {
        let row = a.row(i);
        let lhs = row.dot(&w.transpose());
        let tol = opts.feas_tol * (1.0 + b[i].abs() + row.amax() * w.amax());
        (lhs - b[i], tol)
    };

    loop {
        // pick the next violated row: warm-start hints first, then most violated
        let mut chosen: Option<usize> = None;
        while let Some(i) = pending_hint.first().copied() {
            pending_hint.remove(0);
            if active.contains(&i) {
                continue;
            }
            let (v, tol) = violation(&w, i);
            if v > tol {
                chosen = Some(i);
                break;
            }
        }
        if chosen.is_none() {
            let mut worst = 0.0;
            for i in 0..m {
                if active.contains(&i) {
                    continue;
                }
                let (v, tol) = violation(&w, i);
                if v > tol && v > worst {
                    worst = v;
                    chosen = Some(i);
                }
            }
        }
        let Some(p_row) = chosen else {
            if let Some((w_pol, lam_pol)) = polish(h, f, a, b, &active) {
                let feasible = (0..m).all(|i| {
                    let (v, tol) = violation(&w_pol, i);
                    v <= tol
                });
                let scale = lam.iter().fold(1.0_f64, |acc, l| acc.max(l.abs()));
                if feasible && lam_pol.iter().all(|&l| l >= -1e-12 * scale) {
                    w = w_pol;
                    lam = lam_pol.into_iter().map(|l| l.max(0.0)).collect();
                }
            }
            return Ok(DualResult {
                w,
                active,
                lam,
                status: QpStatus::Optimal,
                iterations,
                certificate: None,
            });
        };

        let mut lam_p = 0.0;
        loop {
            iterations += 1;
            if iterations > opts.max_iter {
                return Ok(DualResult {
                    w,
                    active,
                    lam,
                    status: QpStatus::IterationCap,
                    iterations: opts.max_iter,
                    certificate: None,
                });
            }
            let (dw, dl) = kkt_step(h, a, &active, p_row)?;
            let a_p = a.row(p_row).transpose();

            // largest dual step before an active multiplier hits zero
            let mut t_dual = f64::INFINITY;
            let mut drop_idx = None;
            for (c, &d) in dl.iter().enumerate() {
                if d < 0.0 {
                    let t = lam[c] / -d;
                    if t < t_dual {
                        t_dual = t;
                        drop_idx = Some(c);
                    }
                }
            }

            // compare against the curvature with an empty working set, which
            // bounds it from above
            let curvature = a_p.dot(&dw);
            let free_curvature = a_p.dot(&chol.solve(&a_p));
            let dependent = active.len() >= n || curvature.abs() <= 1e-12 * free_curvature;
            if dependent {
                let Some(c) = drop_idx else {
                    // a_p lies in the span of the working set with nonneg weights: infeasible
                    let mut y = Vector::zeros(m);
                    y[p_row] = 1.0;
                    for (cc, &i) in active.iter().enumerate() {
                        y[i] = dl[cc];
                    }
                    return Ok(DualResult {
                        w,
                        active,
                        lam,
                        status: QpStatus::Infeasible,
                        iterations,
                        certificate: Some(y),
                    });
                };
                for (cc, l) in lam.iter_mut().enumerate() {
                    *l += t_dual * dl[cc];
                }
                lam_p += t_dual;
                active.remove(c);
                lam.remove(c);
                continue;
            }

            let t_primal = (b[p_row] - a_p.dot(&w)) / curvature;
            let t = t_primal.min(t_dual);
            w += &dw * t;
            for (cc, l) in lam.iter_mut().enumerate() {
                *l += t * dl[cc];
            }
            lam_p += t;
            if t_primal <= t_dual {
                active.push(p_row);
                lam.push(lam_p);
                break;
            }
            let c = drop_idx.expect("finite dual step has a blocking index");
            active.remove(c);
            lam.remove(c);
        }
    }
}

/// Max-norm KKT residuals of `s` for `p`.
///
/// Stationarity is `‖Hz + f + Aᵀλ + Eᵀν‖∞`; complementarity is
/// `max |λᵢ (aᵢᵀz − bᵢ)|`.
pub fn kkt_residuals(p: &QpProblem, s: &QpSolution) -> KktResiduals {
    let grad = &p.h * &s.z
        + &p.f_lin
        + p.a_ineq.transpose() * &s.ineq_multipliers
        + p.a_eq.transpose() * &s.eq_multipliers;
    let slack = &p.a_ineq * &s.z - &p.b_ineq;
    let eq = &p.a_eq * &s.z - &p.b_eq;
    KktResiduals {
        stationarity: grad.amax(),
        primal_ineq: slack.iter().fold(0.0_f64, |acc, v| acc.max(*v)),
        primal_eq: eq.amax(),
        dual_nonneg: s
            .ineq_multipliers
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(-*v)),
        complementarity: slack
            .iter()
            .zip(s.ineq_multipliers.iter())
            .fold(0.0_f64, |acc, (r, l)| acc.max((r * l).abs())),
    }
}

fn write_matrix(out: &mut String, name: &str, m: &Mat) {
    let _ = writeln!(out, "[{name}] {} {}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| format!("{:.16e}", m[(i, j)]))
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

fn write_vector(out: &mut String, name: &str, v: &Vector) {
    let _ = writeln!(out, "[{name}] {}", v.len());
    for x in v.iter() {
        let _ = writeln!(out, "{x:.16e}");
    }
}

/// Text dump of a problem: one section per matrix, one row per line,
/// whitespace-separated decimals with 17 significant digits.
pub fn format_qp_dump(p: &QpProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[var_names] {}", p.var_names.len());
    for name in &p.var_names {
        let _ = writeln!(out, "{name}");
    }
    write_matrix(&mut out, "H", &p.h);
    write_vector(&mut out, "f_lin", &p.f_lin);
    write_matrix(&mut out, "A_ineq", &p.a_ineq);
    write_vector(&mut out, "b_ineq", &p.b_ineq);
    write_matrix(&mut out, "A_eq", &p.a_eq);
    write_vector(&mut out, "b_eq", &p.b_eq);
    out
}

pub fn write_qp_dump(p: &QpProblem, path: &Path) -> Result<()> {
    std::fs::write(path, format_qp_dump(p))?;
    Ok(())
}

/// Parses the format written by [`format_qp_dump`].
pub fn parse_qp_dump(text: &str) -> Result<QpProblem> {
    let mut reader = DumpReader {
        lines: text.lines().filter(|l| !l.trim().is_empty()).collect(),
        pos: 0,
    };
    let n_names = reader.header("var_names")?[0];
    let mut var_names = Vec::with_capacity(n_names);
    for _ in 0..n_names {
        var_names.push(reader.line("variable name")?.trim().to_string());
    }
    let h = reader.matrix("H")?;
    let f_lin = reader.vector("f_lin")?;
    let a_ineq = reader.matrix("A_ineq")?;
    let b_ineq = reader.vector("b_ineq")?;
    let a_eq = reader.matrix("A_eq")?;
    let b_eq = reader.vector("b_eq")?;
    let p = QpProblem {
        h,
        f_lin,
        a_ineq,
        b_ineq,
        a_eq,
        b_eq,
        var_names,
    };
    p.validate()?;
    Ok(p)
}

struct DumpReader<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> DumpReader<'a> {
    fn bad(msg: impl Into<String>) -> Error {
        Error::Config(format!("QP dump: {}", msg.into()))
    }

    fn line(&mut self, what: &str) -> Result<&'a str> {
        let line = self
            .lines
            .get(self.pos)
            .copied()
            .ok_or_else(|| Self::bad(format!("unexpected end of input reading {what}")))?;
        self.pos += 1;
        Ok(line)
    }

    fn header(&mut self, name: &str) -> Result<Vec<usize>> {
        let line = self.line(name)?;
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap_or_default();
        if tag != format!("[{name}]") {
            return Err(Self::bad(format!("expected [{name}], found {tag}")));
        }
        let dims = parts
            .map(|s| s.parse::<usize>().map_err(|e| Self::bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if dims.is_empty() {
            return Err(Self::bad(format!("[{name}] is missing its dimensions")));
        }
        Ok(dims)
    }

    fn numbers(line: &str) -> Result<Vec<f64>> {
        line.split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|e| Self::bad(e.to_string())))
            .collect()
    }

    fn matrix(&mut self, name: &str) -> Result<Mat> {
        let dims = self.header(name)?;
        let (r, c) = (
            dims[0],
            *dims
                .get(1)
                .ok_or_else(|| Self::bad(format!("[{name}] needs rows and cols")))?,
        );
        let mut m = Mat::zeros(r, c);
        for i in 0..r {
            let vals = Self::numbers(self.line(name)?)?;
            if vals.len() != c {
                return Err(Self::bad(format!(
                    "{name}: row {i} has {} entries, expected {c}",
                    vals.len()
                )));
            }
            for (j, v) in vals.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    fn vector(&mut self, name: &str) -> Result<Vector> {
        let len = self.header(name)?[0];
        let mut v = Vector::zeros(len);
        for i in 0..len {
            let vals = Self::numbers(self.line(name)?)?;
            if vals.len() != 1 {
                return Err(Self::bad(format!(
                    "{name}: entry {i} is not a single number"
                )));
            }
            v[i] = vals[0];
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{enumerate_qp, random_convex_qp};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn large_multipliers_keep_active_rows_tight() {
        // saturated CLF tick: heavy relaxation penalty, multipliers near 1e6
        let h = Mat::from_diagonal(&Vector::from_vec(vec![2.0 + 2e-10, 2e4]));
        let mut p = QpProblem::new(h, Vector::from_vec(vec![-9.4e-10, 0.0]));
        p.push_ineq(
            &[0.925_464_404_181_857_3, -0.378_834_576_817_269_8],
            -9.486_541_782_704_79,
        );
        p.push_ineq(&[1.0, 0.0], 10.699_420_883_148_08);
        p.push_ineq(&[-1.0, 0.0], 1.300_579_116_851_92);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(s.ineq_multipliers.amax() > 1e6);
        assert!(s.kkt.max() <= 1e-8, "{:?}", s.kkt);
    }

    fn scalar_problem(bound: f64) -> QpProblem {
        // min mu^2 = ½ mu (2) mu  s.t. mu <= bound
        let mut p = QpProblem::new(Mat::from_element(1, 1, 2.0), Vector::zeros(1));
        p.push_ineq(&[1.0], bound);
        p
    }

    #[test]
    fn one_dimensional_active_bound() {
        let s = solve_qp(&scalar_problem(-1.0)).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.z[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.ineq_multipliers[0], 2.0, epsilon = 1e-14);
        assert!(s.kkt.max() <= 1e-12);
    }

    #[test]
    fn one_dimensional_inactive_bound() {
        let s = solve_qp(&scalar_problem(3.0)).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_eq!(s.z[0], 0.0);
        assert_eq!(s.ineq_multipliers[0], 0.0);
        assert!(s.active_set.is_empty());
    }

    #[test]
    fn two_dimensional_halfspace_matches_grid() {
        // min mu1^2 + mu2^2 s.t. mu1 + mu2 >= 2
        let mut p = QpProblem::new(Mat::identity(2, 2) * 2.0, Vector::zeros(2));
        p.push_ineq(&[-1.0, -1.0], -2.0);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);

        // brute-force grid oracle on [0, 2]^2 with step 1e-3
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let steps = 2000;
        for i in 0..=steps {
            let a = i as f64 * 1e-3;
            // on the feasible set the minimizer lies on the boundary a + b >= 2
            let b = (2.0 - a).max(0.0);
            let obj = a * a + b * b;
            if obj < best.0 {
                best = (obj, a, b);
            }
        }
        assert_abs_diff_eq!(s.z[0], best.1, epsilon = 1e-3);
        assert_abs_diff_eq!(s.z[1], best.2, epsilon = 1e-3);
        assert_abs_diff_eq!(s.z[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.z[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn kkt_residual_examples() {
        let p = scalar_problem(-1.0);
        let s = solve_qp(&p).unwrap();
        let r = kkt_residuals(&p, &s);
        assert!(r.max() <= 1e-12);

        let mut moved = s.clone();
        moved.z[0] += 1e-3;
        let r = kkt_residuals(&p, &moved);
        assert_abs_diff_eq!(r.stationarity, 2e-3, epsilon = 1e-12);

        let mut infeasible = s.clone();
        infeasible.z[0] = -0.5;
        infeasible.ineq_multipliers[0] = 0.0;
        assert_abs_diff_eq!(
            kkt_residuals(&p, &infeasible).primal_ineq,
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn infeasible_problem_reports_certificate() {
        // z <= -1 and z >= 1
        let mut p = QpProblem::new(Mat::from_element(1, 1, 2.0), Vector::zeros(1));
        p.push_ineq(&[1.0], -1.0);
        p.push_ineq(&[-1.0], -1.0);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        let y = s.certificate.expect("certificate");
        assert!(y.iter().all(|v| *v >= -1e-12));
        assert!((p.a_ineq.transpose() * &y).amax() <= 1e-12);
        assert!(y.dot(&p.b_ineq) < 0.0);
    }

    #[test]
    fn equality_constraints_are_eliminated() {
        // min ½|z|^2 s.t. z0 + z1 = 1, z0 <= 0.2
        let mut p = QpProblem::new(Mat::identity(2, 2), Vector::zeros(2));
        p.push_eq(&[1.0, 1.0], 1.0);
        p.push_ineq(&[1.0, 0.0], 0.2);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.z[0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(s.z[1], 0.8, epsilon = 1e-12);
        assert!(s.kkt.max() <= 1e-10, "{:?}", s.kkt);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let mut p = QpProblem::new(Mat::identity(2, 2), Vector::zeros(2));
        p.push_eq(&[1.0, 1.0], 1.0);
        p.push_eq(&[2.0, 2.0], 3.0);
        assert_eq!(solve_qp(&p).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn non_convex_reduced_hessian_is_rejected() {
        let p = QpProblem::new(
            Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            Vector::zeros(2),
        );
        assert!(matches!(solve_qp(&p), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn iteration_cap_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_convex_qp(&mut rng, 3, 8);
        let opts = QpOptions {
            max_iter: 1,
            ..QpOptions::default()
        };
        let s = solve_with(&p, &opts, &[]).unwrap();
        let full = solve_qp(&p).unwrap();
        if full.iterations > 1 {
            assert_eq!(s.status, QpStatus::IterationCap);
        }
    }

    #[test]
    fn matches_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..300 {
            let n = 1 + trial % 3;
            let m = trial % 6;
            let p = random_convex_qp(&mut rng, n, m);
            let s = solve_qp(&p).unwrap();
            let oracle = enumerate_qp(&p).expect("generator produces feasible problems");
            assert_eq!(s.status, QpStatus::Optimal);
            assert!(
                (&s.z - &oracle).amax() <= 1e-7,
                "trial {trial}: {} vs {}",
                s.z,
                oracle
            );
            assert!(s.kkt.max() <= 1e-8, "trial {trial}: {:?}", s.kkt);
        }
    }

    #[test]
    fn argmin_invariant_under_objective_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = random_convex_qp(&mut rng, 3, 5);
            let mut q = p.clone();
            q.h *= 7.5;
            q.f_lin *= 7.5;
            let a = solve_qp(&p).unwrap();
            let b = solve_qp(&q).unwrap();
            assert!((&a.z - &b.z).amax() <= 1e-8);
        }
    }

    #[test]
    fn removing_a_constraint_never_increases_the_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = random_convex_qp(&mut rng, 3, 5);
            let full = solve_qp(&p).unwrap();
            let mut relaxed = p.clone();
            relaxed.a_ineq = relaxed.a_ineq.remove_row(0);
            relaxed.b_ineq = relaxed.b_ineq.remove_row(0);
            let r = solve_qp(&relaxed).unwrap();
            assert!(p.objective(&r.z) <= p.objective(&full.z) + 1e-10);
        }
    }

    #[test]
    fn warm_start_reaches_same_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut solver = QpSolver::new(QpOptions {
            warm_start: true,
            ..QpOptions::default()
        });
        let p = random_convex_qp(&mut rng, 3, 6);
        let cold = solve_qp(&p).unwrap();
        let first = solver.solve(&p).unwrap();
        let second = solver.solve(&p).unwrap();
        assert!((&cold.z - &first.z).amax() <= 1e-10);
        assert!((&cold.z - &second.z).amax() <= 1e-10);
    }

    #[test]
    fn dump_round_trip() {
        let mut p = QpProblem::new(
            Mat::identity(2, 2) * 2.0,
            Vector::from_vec(vec![0.1, -1.0 / 3.0]),
        );
        p.push_ineq(&[1.0, 2.0], 0.5);
        p.push_eq(&[1.0, -1.0], 0.0);
        let text = format_qp_dump(&p);
        let back = parse_qp_dump(&text).unwrap();
        assert_eq!(p, back);
        assert!(parse_qp_dump("[H] 1 1\n1\n").is_err());
    }
}
