//! Divergent component of motion: measurement, PD landing correction and
//! the step decision.
//!
//! With the small-angle COM position `x_c = H·θ_a`, the DCM is
//! `ζ = x_c + ẋ_c/ω`. Its rate follows from the linear dynamics, so both are
//! read off the plant's output map `y = C·x + D·u`.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{linear_accel, linearize, DerivedConstants, LinearPlant, ModelParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DcmError {
    #[error("support polygon must satisfy x_min < 0 < x_max (got [{x_min}, {x_max}])")]
    InvalidSupport { x_min: f64, x_max: f64 },
    #[error("invalid step parameter `{field}` = {value}: {reason}")]
    InvalidParameter {
        field: &'static str,
        value: f64,
        reason: &'static str,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcmSample {
    pub zeta: f64,
    pub zeta_dot: f64,
}

impl DcmSample {
    pub fn new(zeta: f64, zeta_dot: f64) -> Self {
        Self { zeta, zeta_dot }
    }
}

impl std::ops::Neg for DcmSample {
    type Output = DcmSample;

    fn neg(self) -> DcmSample {
        DcmSample::new(-self.zeta, -self.zeta_dot)
    }
}

/// Foot extent in the sagittal plane, relative to the pendulum base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportPolygon {
    pub x_min: f64,
    pub x_max: f64,
}

impl Default for SupportPolygon {
    fn default() -> Self {
        Self {
            x_min: -0.08,
            x_max: 0.12,
        }
    }
}

impl SupportPolygon {
    pub fn new(x_min: f64, x_max: f64) -> Result<Self, DcmError> {
        let poly = Self { x_min, x_max };
        poly.validate()?;
        Ok(poly)
    }

    pub fn symmetric(half_width: f64) -> Result<Self, DcmError> {
        Self::new(-half_width, half_width)
    }

    pub fn validate(&self) -> Result<(), DcmError> {
        if self.x_min < 0.0 && 0.0 < self.x_max && self.x_min.is_finite() && self.x_max.is_finite()
        {
            Ok(())
        } else {
            Err(DcmError::InvalidSupport {
                x_min: self.x_min,
                x_max: self.x_max,
            })
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.x_min <= x && x <= self.x_max
    }

    /// The polygon reflected through the base.
    pub fn mirrored(&self) -> Self {
        Self {
            x_min: -self.x_max,
            x_max: -self.x_min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriggerReason {
    DcmOutsideSupport,
    PersistentSaturation,
    FlywheelAngleLimit,
}

impl TriggerReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TriggerReason::DcmOutsideSupport => "dcm-outside-support",
            TriggerReason::PersistentSaturation => "persistent-saturation",
            TriggerReason::FlywheelAngleLimit => "flywheel-angle-limit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecision {
    pub step_required: bool,
    /// Where the swing foot should land, relative to the current base.
    pub landing_offset: f64,
    pub trigger_reason: Option<TriggerReason>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcmGains {
    pub k_p: f64,
    pub k_d: f64,
}

impl Default for DcmGains {
    fn default() -> Self {
        Self {
            k_p: 0.2,
            k_d: 0.05,
        }
    }
}

/// Everything the step rule needs besides the current measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRules {
    pub support: SupportPolygon,
    pub gains: DcmGains,
    pub reference: DcmSample,
    /// Longest tolerated continuous saturation (s).
    pub sat_budget: f64,
    /// Flywheel excursion limit (rad).
    pub theta_w_max: f64,
    /// Leg reach `L_max` (m).
    pub max_reach: f64,
}

impl Default for StepRules {
    fn default() -> Self {
        Self {
            support: SupportPolygon::default(),
            gains: DcmGains::default(),
            reference: DcmSample::default(),
            sat_budget: 0.2,
            theta_w_max: 0.8,
            max_reach: 0.5,
        }
    }
}

impl StepRules {
    pub fn validate(&self) -> Result<(), DcmError> {
        self.support.validate()?;
        let checks = [
            (
                "k_p",
                self.gains.k_p,
                self.gains.k_p >= 0.0,
                "must be finite and >= 0",
            ),
            (
                "k_d",
                self.gains.k_d,
                self.gains.k_d >= 0.0,
                "must be finite and >= 0",
            ),
            (
                "sat_budget",
                self.sat_budget,
                self.sat_budget >= 0.0,
                "must be finite and >= 0",
            ),
            (
                "theta_w_max",
                self.theta_w_max,
                self.theta_w_max > 0.0,
                "must be finite and > 0",
            ),
            (
                "max_reach",
                self.max_reach,
                self.max_reach > 0.0,
                "must be finite and > 0",
            ),
            (
                "reference.zeta",
                self.reference.zeta,
                true,
                "must be finite",
            ),
            (
                "reference.zeta_dot",
                self.reference.zeta_dot,
                true,
                "must be finite",
            ),
        ];
        for (field, value, ok, reason) in checks {
            if !ok || !value.is_finite() {
                return Err(DcmError::InvalidParameter {
                    field,
                    value,
                    reason,
                });
            }
        }
        Ok(())
    }

    /// Rules for the mirror-image scenario.
    pub fn mirrored(&self) -> Self {
        Self {
            support: self.support.mirrored(),
            reference: -self.reference,
            ..*self
        }
    }
}

/// `ζ = x_c + ẋ_c/ω`.
pub fn dcm_from_com(x_c: f64, x_c_dot: f64, omega: f64) -> f64 {
    x_c + x_c_dot / omega
}

/// `[ζ, ζ̇] = C·x + D·u`.
pub fn measure_dcm(plant: &LinearPlant, x: &Vector3<f64>, u: &Vector2<f64>) -> DcmSample {
    let y = plant.c * x + plant.d * u;
    DcmSample::new(y[0], y[1])
}

/// `|ζ̇_measured − d/dt ζ_measured|`, the time derivative taken by the chain
/// rule through the linear dynamics. Zero up to rounding when the rate row of
/// the output map is consistent with the position row.
pub fn dcm_rate_identity_check(
    params: &ModelParams,
    consts: &DerivedConstants,
    x: &Vector3<f64>,
    u: &Vector2<f64>,
) -> f64 {
    let plant = linearize(params, consts);
    let measured = measure_dcm(&plant, x, u);
    let x_dot = linear_accel(&plant, x, u);
    let chain_rule = plant.c.row(0).dot(&x_dot.transpose());
    (measured.zeta_dot - chain_rule).abs()
}

/// PD correction of the landing point from the DCM tracking error.
pub fn pd_step_adjustment(sample: &DcmSample, reference: &DcmSample, gains: &DcmGains) -> f64 {
    gains.k_p * (sample.zeta - reference.zeta) + gains.k_d * (sample.zeta_dot - reference.zeta_dot)
}

/// Decides whether the stance can be held. Triggers are checked in priority
/// order: DCM outside the support polygon, continuous saturation longer than
/// the budget, then flywheel excursion beyond its limit.
pub fn decide_step(
    sample: &DcmSample,
    rules: &StepRules,
    sat_time: f64,
    theta_w: f64,
) -> StepDecision {
    let trigger_reason = if !rules.support.contains(sample.zeta) {
        Some(TriggerReason::DcmOutsideSupport)
    } else if sat_time > rules.sat_budget {
        Some(TriggerReason::PersistentSaturation)
    } else if theta_w.abs() > rules.theta_w_max {
        Some(TriggerReason::FlywheelAngleLimit)
    } else {
        None
    };
    let raw = sample.zeta + pd_step_adjustment(sample, &rules.reference, &rules.gains);
    let landing_offset = raw.clamp(-rules.max_reach, rules.max_reach);
    StepDecision {
        step_required: trigger_reason.is_some(),
        landing_offset,
        trigger_reason,
    }
}
