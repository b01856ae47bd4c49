//! Control Lyapunov / control barrier function quadratic-program controllers
//! with robust (min-max) variants under bounded model uncertainty.
//!
//! Module map:
//! - [`matstack`]: small dense linear algebra (Lyapunov solve, eigen extremes).
//! - [`qpcore`]: dense convex QP solver with KKT diagnostics.
//! - [`plantsim`]: control-affine plants, RK4 integration, closed-loop and
//!   hybrid simulation.
//! - [`iolin`]: input-output linearization and Lie-derivative oracle.
//! - [`certify`]: RES-CLF construction, reciprocal barriers, relaxation monitor.
//! - [`robustify`]: min-max robust rows for CLF, CBF and constraints.
//! - [`ctrlqp`]: per-tick QP assembly for the six controller variants.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod ctrlqp;
pub mod error;
pub mod iolin;
pub mod matstack;
pub mod oracles;
pub mod plantsim;
pub mod qpcore;
pub mod robustify;

pub use error::{Error, Result};
pub use matstack::{Mat, Vector};
