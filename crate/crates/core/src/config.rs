//! TOML configuration shared by the CLI subcommands.
//!
//! Every section and field is optional; omitted values take the library
//! defaults. The fully resolved form is what gets echoed next to the outputs,
//! and loading that echo yields the same configuration.
//!
//! ```toml
//! [model]        # ModelParams fields
//! [controller]   # q, r, tau_a_max, tau_w_max, x_ref
//! [step]         # support polygon, PD gains, DCM reference, trigger limits
//! [episode]      # duration, dt, thresholds, initial_state, disturbance
//! [grid]         # theta_a / theta_a_dot = { min, max, count }
//! [output]       # dir, svg, jobs
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{LqrWeights, TorqueLimits};
use crate::dcm::{DcmGains, DcmSample, StepRules, SupportPolygon};
use crate::model::{ModelParams, State};
use crate::sim::{ControllerSettings, Disturbance, EpisodeConfig, Thresholds};
use crate::sweep::{GridAxis, SweepSpec};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {reason}")]
    Validation { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub q: [[f64; 3]; 3],
    pub r: [[f64; 2]; 2],
    pub tau_a_max: f64,
    pub tau_w_max: f64,
    pub x_ref: [f64; 3],
}

impl Default for ControllerSection {
    fn default() -> Self {
        let w = LqrWeights::default();
        let limits = TorqueLimits::default();
        Self {
            q: std::array::from_fn(|i| std::array::from_fn(|j| w.q[(i, j)])),
            r: std::array::from_fn(|i| std::array::from_fn(|j| w.r[(i, j)])),
            tau_a_max: limits.tau_a_max,
            tau_w_max: limits.tau_w_max,
            x_ref: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepSection {
    pub x_min: f64,
    pub x_max: f64,
    pub k_p: f64,
    pub k_d: f64,
    pub zeta_ref: f64,
    pub zeta_dot_ref: f64,
    pub sat_budget: f64,
    pub theta_w_max: f64,
    pub max_reach: f64,
    pub stop_on_step: bool,
    pub max_steps: usize,
}

impl Default for StepSection {
    fn default() -> Self {
        let rules = StepRules::default();
        let episode = EpisodeConfig::default();
        Self {
            x_min: rules.support.x_min,
            x_max: rules.support.x_max,
            k_p: rules.gains.k_p,
            k_d: rules.gains.k_d,
            zeta_ref: rules.reference.zeta,
            zeta_dot_ref: rules.reference.zeta_dot,
            sat_budget: rules.sat_budget,
            theta_w_max: rules.theta_w_max,
            max_reach: rules.max_reach,
            stop_on_step: episode.stop_on_step,
            max_steps: episode.max_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSection {
    pub duration: f64,
    pub dt: f64,
    pub theta_fall: f64,
    pub settle_theta: f64,
    pub settle_rate: f64,
    /// Used by the single-episode command; the sweep overrides lean and rate.
    pub initial_state: State,
    pub disturbance: Disturbance,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        let e = EpisodeConfig::default();
        Self {
            duration: e.duration,
            dt: e.dt,
            theta_fall: e.thresholds.theta_fall,
            settle_theta: e.thresholds.settle_theta,
            settle_rate: e.thresholds.settle_rate,
            initial_state: e.initial_state,
            disturbance: e.disturbance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub theta_a: GridAxis,
    pub theta_a_dot: GridAxis,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            theta_a: GridAxis::new(-0.3, 0.3, 61),
            theta_a_dot: GridAxis::new(-1.5, 1.5, 61),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub svg: bool,
    /// Worker threads for the sweep; 0 uses every core, 1 runs serially.
    pub jobs: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            svg: false,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub model: ModelParams,
    pub controller: ControllerSection,
    pub step: StepSection,
    pub episode: EpisodeSection,
    pub grid: GridSection,
    pub output: OutputSection,
}

impl SweepConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: SweepConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn weights(&self) -> LqrWeights {
        LqrWeights {
            q: Matrix3::from_fn(|i, j| self.controller.q[i][j]),
            r: Matrix2::from_fn(|i, j| self.controller.r[i][j]),
        }
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        let s = &self.step;
        EpisodeConfig {
            initial_state: self.episode.initial_state,
            duration: self.episode.duration,
            dt: self.episode.dt,
            disturbance: self.episode.disturbance,
            controller: ControllerSettings {
                weights: self.weights(),
                limits: TorqueLimits {
                    tau_a_max: self.controller.tau_a_max,
                    tau_w_max: self.controller.tau_w_max,
                },
                rules: StepRules {
                    support: SupportPolygon {
                        x_min: s.x_min,
                        x_max: s.x_max,
                    },
                    gains: DcmGains {
                        k_p: s.k_p,
                        k_d: s.k_d,
                    },
                    reference: DcmSample::new(s.zeta_ref, s.zeta_dot_ref),
                    sat_budget: s.sat_budget,
                    theta_w_max: s.theta_w_max,
                    max_reach: s.max_reach,
                },
                x_ref: Vector3::from(self.controller.x_ref),
            },
            thresholds: Thresholds {
                theta_fall: self.episode.theta_fall,
                settle_theta: self.episode.settle_theta,
                settle_rate: self.episode.settle_rate,
            },
            stop_on_step: s.stop_on_step,
            max_steps: s.max_steps,
        }
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        SweepSpec {
            params: self.model,
            episode: self.episode_config(),
            theta_a: self.grid.theta_a,
            theta_a_dot: self.grid.theta_a_dot,
            jobs: self.output.jobs,
        }
    }

    /// Checks every section's invariants; the error names the field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        use crate::dcm::DcmError;
        use crate::model::ModelError;
        use crate::sim::SimError;
        use crate::sweep::SweepError;

        self.model.validate().map_err(
            |ModelError::InvalidParameter { field, reason, .. }| {
                ConfigError::invalid(format!("model.{field}"), reason)
            },
        )?;

        let c = &self.controller;
        let q = Matrix3::from_fn(|i, j| c.q[i][j]);
        let r = Matrix2::from_fn(|i, j| c.r[i][j]);
        if !q.iter().all(|v| v.is_finite()) || (q - q.transpose()).norm() > 1e-12 * (1.0 + q.norm())
        {
            return Err(ConfigError::invalid(
                "controller.q",
                "must be finite and symmetric",
            ));
        }
        if q.symmetric_eigenvalues().min() < -1e-12 * (1.0 + q.norm()) {
            return Err(ConfigError::invalid(
                "controller.q",
                "must be positive semidefinite",
            ));
        }
        if !r.iter().all(|v| v.is_finite())
            || (r - r.transpose()).norm() > 1e-12 * (1.0 + r.norm())
            || r.cholesky().is_none()
        {
            return Err(ConfigError::invalid(
                "controller.r",
                "must be symmetric positive definite",
            ));
        }

        let prefix = |field: &str| {
            if matches!(field, "tau_a_max" | "tau_w_max" | "x_ref") {
                format!("controller.{field}")
            } else if matches!(field, "thresholds") {
                "episode.theta_fall/settle_theta/settle_rate".to_string()
            } else {
                format!("episode.{field}")
            }
        };
        self.episode_config().validate().map_err(|e| match e {
            SimError::InvalidConfig { field, reason } => {
                ConfigError::invalid(prefix(field), reason)
            }
            SimError::Step(DcmError::InvalidSupport { .. }) => ConfigError::invalid(
                "step.x_min/x_max",
                "support polygon must satisfy x_min < 0 < x_max",
            ),
            SimError::Step(DcmError::InvalidParameter { field, reason, .. }) => {
                let field = match field {
                    "reference.zeta" => "zeta_ref",
                    "reference.zeta_dot" => "zeta_dot_ref",
                    f => f,
                };
                ConfigError::invalid(format!("step.{field}"), reason)
            }
            other => ConfigError::invalid("episode", other.to_string()),
        })?;

        for (name, axis) in [
            ("theta_a", &self.grid.theta_a),
            ("theta_a_dot", &self.grid.theta_a_dot),
        ] {
            axis.validate("").map_err(|e| match e {
                SweepError::InvalidAxis { reason, .. } => {
                    ConfigError::invalid(format!("grid.{name}"), reason)
                }
                other => ConfigError::invalid(format!("grid.{name}"), other.to_string()),
            })?;
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<SweepConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    SweepConfig::from_toml_str(&text)
}

/// Writes the resolved configuration to `dir/resolved_config.toml`.
pub fn write_resolved_config(config: &SweepConfig, dir: &Path) -> Result<PathBuf, ConfigError> {
    let path = dir.join(RESOLVED_CONFIG_FILE);
    fs::write(&path, config.to_toml_string()).map_err(|source| ConfigError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let text = r#"
[grid]
theta_a = { min = -0.1, max = 0.1, count = 5 }
theta_a_dot = { min = -0.5, max = 0.5, count = 3 }
"#;
        let cfg = SweepConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.model, ModelParams::default());
        assert_eq!(cfg.grid.theta_a, GridAxis::new(-0.1, 0.1, 5));
        assert_eq!(
            cfg.episode_config(),
            EpisodeConfig {
                ..EpisodeConfig::default()
            }
        );
    }

    #[test]
    fn zero_dt_names_the_field() {
        let err = SweepConfig::from_toml_str("[episode]\ndt = 0.0\n").unwrap_err();
        match err {
            ConfigError::Validation { field, .. } => assert_eq!(field, "episode.dt"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = SweepConfig::from_toml_str("[model]\nflywheel_mass = \"heavy\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("flywheel_mass"), "{msg}");
        let err = SweepConfig::from_toml_str("[model]\nflywheel_mas = 3.0\n").unwrap_err();
        assert!(err.to_string().contains("flywheel_mas"));
    }

    #[test]
    fn invalid_fields_are_named() {
        let cases = [
            ("[model]\nflywheel_mass = -1.0\n", "model.flywheel_mass"),
            (
                "[controller]\nr = [[1.0, 0.0], [0.0, 0.0]]\n",
                "controller.r",
            ),
            ("[controller]\ntau_a_max = 0.0\n", "controller.tau_a_max"),
            ("[step]\nx_min = 0.01\n", "step.x_min/x_max"),
            ("[step]\nk_p = -0.1\n", "step.k_p"),
            (
                "[grid]\ntheta_a = { min = 0.1, max = -0.1, count = 3 }\n",
                "grid.theta_a",
            ),
        ];
        for (text, expected) in cases {
            match SweepConfig::from_toml_str(text) {
                Err(ConfigError::Validation { field, .. }) => assert_eq!(field, expected, "{text}"),
                other => panic!("{text}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = r#"
[controller]
tau_a_max = 12.5
[episode.disturbance]
kind = "force"
t0 = 0.5
duration = 0.1
force = -30.0
[grid]
theta_a = { min = -0.2, max = 0.2, count = 7 }
"#;
        let cfg = SweepConfig::from_toml_str(text).unwrap();
        let echoed = cfg.to_toml_string();
        let again = SweepConfig::from_toml_str(&echoed).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(echoed, again.to_toml_string());
    }
}
