//! Input-output linearization for outputs of relative degree two.
//!
//! For `ÿ = Lf²y(x) + LgLfy(x) u` the map `u = (LgLfy)⁻¹ (μ − Lf²y)` renders
//! `ÿ = μ` whenever the Lie derivatives come from the true plant. Models supply
//! closed-form derivatives; [`fd_lie_oracle`] rebuilds them with central
//! differences to catch derivation mistakes.

use nalgebra::SVD;

use crate::error::{Error, Result};
use crate::matstack::{Mat, Vector};
use crate::plantsim::ControlAffine;

/// Decoupling matrices with a condition number above this are singular.
pub const CONDITION_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct LieBundle {
    pub y: Vector,
    pub ydot: Vector,
    pub lf2y: Vector,
    pub lglfy: Mat,
}

impl LieBundle {
    pub fn outputs(&self) -> usize {
        self.y.len()
    }

    /// Largest entry-wise error relative to `reference`, with a unit floor on
    /// the denominator so entries near zero are compared absolutely.
    pub fn max_rel_error(&self, reference: &LieBundle) -> f64 {
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        let vecs = [
            (&self.y, &reference.y),
            (&self.ydot, &reference.ydot),
            (&self.lf2y, &reference.lf2y),
        ];
        let mut worst = vecs
            .iter()
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| rel(*x, *y)))
            .fold(0.0_f64, f64::max);
        for (a, b) in self.lglfy.iter().zip(reference.lglfy.iter()) {
            worst = worst.max(rel(*a, *b));
        }
        worst
    }
}

/// Stacked transverse coordinates `η = [y; ẏ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransverseState {
    pub eta: Vector,
}

/// 2-norm condition number of the decoupling matrix.
pub fn decoupling_condition(lglfy: &Mat) -> f64 {
    let sv = SVD::new(lglfy.clone(), false, false).singular_values;
    let hi = sv.max();
    let lo = sv.min();
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn check_decoupling(lglfy: &Mat) -> Result<()> {
    let cond = decoupling_condition(lglfy);
    if !(cond <= CONDITION_LIMIT) {
        return Err(Error::RelativeDegree {
            condition: cond,
            limit: CONDITION_LIMIT,
        });
    }
    Ok(())
}

/// Evaluates the model's closed-form Lie derivatives at `x` and checks that
/// the decoupling matrix is invertible.
pub fn lie_bundle(model: &dyn ControlAffine, x: &Vector) -> Result<LieBundle> {
    let b = model.lie(x);
    check_decoupling(&b.lglfy)?;
    Ok(b)
}

fn central_jacobian(fun: impl Fn(&Vector) -> Vector, x: &Vector, h_fd: f64) -> Mat {
    let n = x.len();
    let rows = fun(x).len();
    let mut jac = Mat::zeros(rows, n);
    for j in 0..n {
        let h = h_fd * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (fun(&xp) - fun(&xm)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// Lie derivatives rebuilt from central differences: `ẏ = (∂y/∂x) f`,
/// `Lf²y = (∂ẏ/∂x) f`, `LgLfy = (∂ẏ/∂x) g`. `y` is taken from the model's
/// output map and `ẏ` from its closed-form rate, so only first derivatives
/// are differenced.
pub fn fd_lie_oracle(model: &dyn ControlAffine, x: &Vector, h_fd: f64) -> LieBundle {
    let f = model.drift(x);
    let g = model.input_field(x);
    let jy = central_jacobian(|z| model.output(z), x, h_fd);
    let jyd = central_jacobian(|z| model.lie(z).ydot, x, h_fd);
    LieBundle {
        y: model.output(x),
        ydot: &jy * &f,
        lf2y: &jyd * &f,
        lglfy: &jyd * &g,
    }
}

/// `u = (LgLfy)⁻¹ (μ − Lf²y)`.
pub fn io_control(bundle: &LieBundle, mu: &Vector) -> Result<Vector> {
    check_decoupling(&bundle.lglfy)?;
    bundle
        .lglfy
        .clone()
        .lu()
        .solve(&(mu - &bundle.lf2y))
        .ok_or_else(|| Error::Singular("decoupling matrix".into()))
}

/// Feedforward term `u_ff = −(LgLfy)⁻¹ Lf²y`.
pub fn feedforward(bundle: &LieBundle) -> Result<Vector> {
    io_control(bundle, &Vector::zeros(bundle.outputs()))
}

/// Inverse of the decoupling matrix.
pub fn decoupling_inverse(bundle: &LieBundle) -> Result<Mat> {
    check_decoupling(&bundle.lglfy)?;
    bundle
        .lglfy
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("decoupling matrix".into()))
}

pub fn transverse(bundle: &LieBundle) -> TransverseState {
    let m = bundle.outputs();
    let mut eta = Vector::zeros(2 * m);
    eta.rows_mut(0, m).copy_from(&bundle.y);
    eta.rows_mut(m, m).copy_from(&bundle.ydot);
    TransverseState { eta }
}

/// Closed-loop mismatch `(Δ1, Δ2)` seen by an IO-linearizing controller that
/// uses `nominal` while the plant follows `truth`, so `ÿ = μ + Δ1 + Δ2 μ`.
pub fn model_mismatch(truth: &LieBundle, nominal: &LieBundle) -> Result<(Vector, Mat)> {
    let inv = decoupling_inverse(nominal)?;
    let gain = &truth.lglfy * inv;
    let d1 = &truth.lf2y - &gain * &nominal.lf2y;
    let d2 = &gain - Mat::identity(gain.nrows(), gain.ncols());
    Ok((d1, d2))
}
