//! Scenario files: one TOML document per run.
//!
//! ```toml
//! name = "spring_cart_case2_robust"
//! t_end = 10.0          # s
//! ctrl_rate = 100.0     # Hz
//! substeps = 10
//! x0 = [0.0, 0.0]       # truth state, zero-padded to the truth dimension
//!
//! [model]
//! kind = "spring_cart"
//! case = 2
//!
//! [controller]
//! variant = "RobustCbfClfQpRobustConstraints"
//! eps = 0.2
//! fallback = "saturated_io"
//! barrier = { limit = 0.01, alpha = 5.0, gamma = 1.0 }
//! bounds = { clf = { d1_max = 1.0, d2_max = 0.7 }, cbf = { d1_max = 50.0, d2_max = 0.7 } }
//!
//! [expect]
//! min_h_at_least = -1e-6
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use rescbf_core::certify::{build_res_clf, rd2_lift, ReciprocalBarrier};
use rescbf_core::ctrlqp::{
    ControllerSpec, FallbackPolicy, PlantConstraint, Variant, DEFAULT_PENALTY,
};
use rescbf_core::plantsim::models::{
    bouncing_mass, inverted_pendulum, spring_cart, BouncingParams, Pendulum, PendulumOutput,
    SpringCartParams, GRAVITY,
};
use rescbf_core::plantsim::{HybridSpec, PlantPair, SimConfig};
use rescbf_core::robustify::UncertaintyBounds;
use rescbf_core::{Mat, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub model: ModelConfig,
    pub controller: ControllerConfig,
    pub x0: Vec<f64>,
    /// s
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// Hz
    #[serde(default = "default_rate")]
    pub ctrl_rate: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub monitor: MonitorConfig,
    #[serde(default)]
    pub expect: ExpectConfig,
    pub output_dir: Option<PathBuf>,
}

fn default_t_end() -> f64 {
    10.0
}
fn default_rate() -> f64 {
    100.0
}
fn default_substeps() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    SpringCart {
        case: u8,
        #[serde(default)]
        params: SpringCartParams,
    },
    InvertedPendulum {
        /// kg
        #[serde(default = "one")]
        mass: f64,
        /// m
        #[serde(default = "one")]
        length: f64,
        /// N·m·s/rad
        #[serde(default = "pendulum_damping")]
        damping: f64,
        #[serde(default = "angle_output")]
        output: PendulumOutput,
        #[serde(default)]
        target: f64,
        /// Use the nominal model as the truth.
        #[serde(default)]
        exact: bool,
    },
    BouncingMass {
        #[serde(default)]
        params: BouncingParams,
    },
}

fn one() -> f64 {
    1.0
}
fn pendulum_damping() -> f64 {
    0.1
}
fn angle_output() -> PendulumOutput {
    PendulumOutput::Angle
}

impl ModelConfig {
    pub fn build(&self) -> anyhow::Result<(PlantPair, Option<HybridSpec>)> {
        Ok(match self {
            ModelConfig::SpringCart { case, params } => (spring_cart(*case, params)?, None),
            ModelConfig::InvertedPendulum {
                mass,
                length,
                damping,
                output,
                target,
                exact,
            } => {
                let nominal = Pendulum {
                    mass: *mass,
                    length: *length,
                    damping: *damping,
                    gravity: GRAVITY,
                    target: *target,
                    output: *output,
                };
                let pair = if *exact {
                    PlantPair::exact(Arc::new(nominal))
                } else {
                    inverted_pendulum(nominal)
                };
                (pair, None)
            }
            ModelConfig::BouncingMass { params } => {
                let (pair, hybrid) = bouncing_mass(params);
                (pair, Some(hybrid))
            }
        })
    }
}

/// Lifted position limit `a·q ≤ limit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierConfig {
    /// m
    pub limit: f64,
    #[serde(default = "unit_direction")]
    pub direction: Vec<f64>,
    /// 1/s
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub gamma: f64,
}

fn unit_direction() -> Vec<f64> {
    vec![1.0]
}
fn default_alpha() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub variant: Variant,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Rows of `K` (m × 2m); defaults to `[I, 2I]`.
    pub k_gain: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_p")]
    pub p: f64,
    /// `[p1, p2]` to split the robust CLF relaxation.
    pub split_delta: Option<[f64; 2]>,
    #[serde(default)]
    pub fallback: FallbackPolicy,
    #[serde(default)]
    pub constraints: Vec<PlantConstraint>,
    pub barrier: Option<BarrierConfig>,
    pub bounds: Option<UncertaintyBounds>,
}

fn default_eps() -> f64 {
    0.2
}
fn default_p() -> f64 {
    DEFAULT_PENALTY
}

impl ControllerConfig {
    pub fn build(&self, outputs: usize) -> anyhow::Result<ControllerSpec> {
        let k = match &self.k_gain {
            None => None,
            Some(rows) => {
                let cols = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != cols) {
                    bail!("k_gain rows must have equal length");
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Some(Mat::from_row_slice(rows.len(), cols, &flat))
            }
        };
        let clf = build_res_clf(outputs, self.eps, k, None).context("building the CLF")?;
        let mut spec = ControllerSpec::new(self.variant, clf).with_fallback(self.fallback);
        spec.p = self.p;
        spec.split_delta = self.split_delta.map(|[a, b]| (a, b));
        spec.constraints = self.constraints.clone();
        if let Some(b) = &self.barrier {
            spec.cbf = Some(ReciprocalBarrier {
                h: rd2_lift(&b.direction, b.limit, b.alpha)?,
                gamma: b.gamma,
            });
        }
        spec.bounds = self.bounds.clone();
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    /// Cap `w̄_ε`; the measured supremum of `w_ε` is used when absent.
    pub w_bar: Option<f64>,
}

/// Assertions checked after the run; any failure makes a suite exit nonzero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectConfig {
    pub min_h_at_least: Option<f64>,
    pub min_h_below: Option<f64>,
    pub theorem1_holds: Option<bool>,
    pub completes: Option<bool>,
    /// s
    pub max_wall_time: Option<f64>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading scenario {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing scenario {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.name.trim().is_empty() {
            bail!("scenario name must not be empty");
        }
        if !(self.t_end > 0.0) || !(self.ctrl_rate > 0.0) || self.substeps == 0 {
            bail!("t_end, ctrl_rate and substeps must be positive");
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            bail!("x0 must be finite");
        }
        let positive = |label: &str, v: f64| {
            if v > 0.0 {
                Ok(())
            } else {
                Err(anyhow::anyhow!("{label} must be positive, got {v}"))
            }
        };
        match &self.model {
            ModelConfig::SpringCart { params: p, .. } => {
                positive("cart_mass", p.cart_mass)?;
                positive("damping", p.damping)?;
                positive("load_mass", p.load_mass)?;
                positive("spring", p.spring)?;
                positive("second_cart_mass", p.second_cart_mass)?;
                positive("shaking_frequency", p.shaking_frequency)?;
            }
            ModelConfig::InvertedPendulum { mass, length, .. } => {
                positive("mass", *mass)?;
                positive("length", *length)?;
            }
            ModelConfig::BouncingMass { params } => {
                positive("mass", params.mass)?;
                if !(0.0..1.0).contains(&params.restitution) {
                    bail!("restitution must lie in [0, 1)");
                }
            }
        }
        if let Some(b) = &self.controller.barrier {
            positive("alpha", b.alpha)?;
            positive("gamma", b.gamma)?;
        }
        Ok(())
    }

    pub fn sim_config(&self, hybrid: Option<HybridSpec>) -> SimConfig {
        SimConfig {
            t_end: self.t_end,
            ctrl_rate: self.ctrl_rate,
            substeps: self.substeps,
            hybrid,
        }
    }

    /// Plant pair, hybrid spec, controller spec and initial truth state.
    pub fn build(&self) -> anyhow::Result<(PlantPair, Option<HybridSpec>, ControllerSpec, Vector)> {
        let (pair, hybrid) = self.model.build()?;
        let spec = self.controller.build(pair.nominal.input_dim())?;
        let n = pair.truth.state_dim();
        if self.x0.len() > n {
            bail!(
                "x0 has {} entries but the plant state has {n}",
                self.x0.len()
            );
        }
        let mut x0 = Vector::zeros(n);
        for (i, v) in self.x0.iter().enumerate() {
            x0[i] = *v;
        }
        Ok((pair, hybrid, spec, x0))
    }

    /// `output_dir`, else `$RQP_OUTPUT_ROOT/<name>`, else `out/<name>`.
    pub fn resolve_output_dir(&self) -> PathBuf {
        if let Some(d) = &self.output_dir {
            return d.clone();
        }
        let root = std::env::var_os(crate::OUTPUT_ROOT_ENV)
            .map_or_else(|| PathBuf::from("out"), PathBuf::from);
        root.join(&self.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
x0 = [0.0, 0.0]
[model]
kind = "spring_cart"
case = 2
[controller]
variant = "CbfClfQp"
barrier = { limit = 0.01 }
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.ctrl_rate, 100.0);
        assert_eq!(cfg.substeps, 10);
        assert_eq!(cfg.controller.eps, 0.2);
        assert_eq!(cfg.controller.p, 1e4);
        let (pair, hybrid, spec, x0) = cfg.build().unwrap();
        assert!(hybrid.is_none());
        assert_eq!(pair.truth.state_dim(), 2);
        assert_eq!(spec.cbf.unwrap().gamma, 1.0);
        assert_eq!(x0.len(), 2);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(
            ScenarioConfig::from_toml(&MINIMAL.replace("case = 2", "case = 2\ncolour = 1"))
                .is_err()
        );
        assert!(ScenarioConfig::from_toml(
            &MINIMAL.replace("x0 = [0.0, 0.0]", "x0 = [0.0, 0.0]\nt_end = -1.0")
        )
        .is_err());
        let bad_case = ScenarioConfig::from_toml(&MINIMAL.replace("case = 2", "case = 9")).unwrap();
        assert!(bad_case.build().is_err());
        let no_barrier =
            ScenarioConfig::from_toml(&MINIMAL.replace("barrier = { limit = 0.01 }", "")).unwrap();
        assert!(no_barrier.build().is_err());
    }

    #[test]
    fn short_x0_is_padded_for_the_coupled_cart() {
        let cfg = ScenarioConfig::from_toml(&MINIMAL.replace("case = 2", "case = 4")).unwrap();
        let (_, _, _, x0) = cfg.build().unwrap();
        assert_eq!(x0.len(), 4);
    }
}
