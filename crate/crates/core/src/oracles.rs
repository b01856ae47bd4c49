//! Independent reference computations used to cross-check the production
//! paths: exhaustive active-set enumeration for small QPs and random problem
//! generators. Nothing here is called by the controllers themselves.

use nalgebra::DMatrix;
use rand::Rng;

use crate::matstack::{Mat, Vector};
use crate::qpcore::QpProblem;

/// Brute-force QP minimizer over inequality constraints only.
///
/// Every subset of rows is treated as a candidate active set; its KKT system
/// is solved directly and the candidate is kept when it is primal feasible
/// and has nonnegative multipliers. Returns `None` when no subset qualifies
/// (infeasible problem). Exponential in the number of rows, so use it for
/// `≤ ~10` constraints.
pub fn enumerate_qp(p: &QpProblem) -> Option<Vector> {
    assert_eq!(
        p.a_eq.nrows(),
        0,
        "enumeration oracle handles inequalities only"
    );
    let n = p.num_vars();
    let m = p.a_ineq.nrows();
    let tol = 1e-9;
    let mut best: Option<(f64, Vector)> = None;
    for mask in 0u32..(1u32 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = rows.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::<f64>::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
        let mut rhs = Vector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&p.f_lin));
        for (c, &i) in rows.iter().enumerate() {
            for j in 0..n {
                kkt[(j, n + c)] = p.a_ineq[(i, j)];
                kkt[(n + c, j)] = p.a_ineq[(i, j)];
            }
            rhs[n + c] = p.b_ineq[i];
        }
        let Some(sol) = kkt.full_piv_lu().solve(&rhs) else {
            continue;
        };
        let z = sol.rows(0, n).into_owned();
        let lam = sol.rows(n, k).into_owned();
        if lam.iter().any(|l| *l < -tol) {
            continue;
        }
        let slack = &p.a_ineq * &z - &p.b_ineq;
        if slack.iter().any(|s| *s > tol * (1.0 + p.b_ineq.amax())) {
            continue;
        }
        let obj = p.objective(&z);
        if best.as_ref().is_none_or(|(b, _)| obj < *b - 1e-14) {
            best = Some((obj, z));
        }
    }
    best.map(|(_, z)| z)
}

/// Random strictly convex QP with `n` variables and `m` inequality rows.
/// The constraint set always contains the point `z0` drawn in the unit box,
/// so the problem is feasible.
pub fn random_convex_qp<R: Rng>(rng: &mut R, n: usize, m: usize) -> QpProblem {
    let l = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &l * l.transpose() + Mat::identity(n, n) * 0.1;
    let f = Vector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let z0 = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let mut p = QpProblem::new(h, f);
    for _ in 0..m {
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = Vector::from_vec(row.clone());
        let rhs = a.dot(&z0) + rng.random_range(0.0..0.5);
        p.push_ineq(&row, rhs);
    }
    p
}
