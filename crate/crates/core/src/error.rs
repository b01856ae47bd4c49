use thiserror::Error;

/// Errors raised by the control, solver and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("closed-loop matrix is not Hurwitz: eigenvalue with real part {max_real_part:e}")]
    NotHurwitz { max_real_part: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("relative-degree failure: decoupling matrix condition number {condition:e} exceeds {limit:e}")]
    RelativeDegree { condition: f64, limit: f64 },

    #[error("safety violated: h(x) = {h:e} is not strictly positive")]
    SafetyViolated { h: f64 },

    #[error("invalid uncertainty bound: {0}")]
    InvalidBounds(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("QP infeasible at tick {tick}")]
    Infeasible { tick: usize },

    #[error("QP iteration cap reached at tick {tick}")]
    IterationCap { tick: usize },

    #[error("non-finite state at t = {t}: last finite state {last_finite:?}")]
    NonFinite { t: f64, last_finite: Vec<f64> },

    #[error("controller failed at tick {tick}: {source}")]
    Controller { tick: usize, source: Box<Error> },

    #[error("hybrid event limit {max_events} exceeded at t = {t}")]
    TooManyEvents { max_events: usize, t: f64 },

    #[error("unknown model case {0}")]
    UnknownCase(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
