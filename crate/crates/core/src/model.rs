//! Pendulum-plus-flywheel plant: physical parameters, the full nonlinear
//! dynamics and the linearization about the upright equilibrium.
//!
//! Sign conventions: `theta_a` is the lean of the pendulum from vertical
//! (positive forward), `theta_w` is the flywheel angle relative to the
//! pendulum. The ankle torque `tau_a` acts between ground and pendulum, the
//! hip torque `tau_w` acts between pendulum and flywheel.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model parameter `{field}` = {value}: {reason}")]
    InvalidParameter {
        field: &'static str,
        value: f64,
        reason: &'static str,
    },
}

/// Physical constants of the plant. All quantities are SI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Flywheel (upper body) mass `M`.
    pub flywheel_mass: f64,
    /// Pendulum (leg) mass `m`.
    pub pendulum_mass: f64,
    /// Base to flywheel centre of mass, `H`.
    pub flywheel_height: f64,
    /// Base to pendulum centre of mass, `h`.
    pub pendulum_com_height: f64,
    /// Pendulum inertia about the base, `I_p`.
    pub pendulum_inertia: f64,
    /// Flywheel inertia about its own centre, `I_w`.
    pub flywheel_inertia: f64,
    pub gravity: f64,
    /// Vertical COM acceleration, held constant over an episode.
    pub com_vertical_accel: f64,
    /// COM height used for the natural frequency only.
    pub com_height: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            flywheel_mass: 10.0,
            pendulum_mass: 2.0,
            flywheel_height: 0.8,
            pendulum_com_height: 0.4,
            pendulum_inertia: 0.1,
            flywheel_inertia: 0.05,
            gravity: 9.81,
            com_vertical_accel: 0.0,
            com_height: 0.8,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let checks: [(&'static str, f64, bool, &'static str); 9] = [
            (
                "flywheel_mass",
                self.flywheel_mass,
                self.flywheel_mass > 0.0,
                "must be > 0",
            ),
            (
                "pendulum_mass",
                self.pendulum_mass,
                self.pendulum_mass >= 0.0,
                "must be >= 0",
            ),
            (
                "flywheel_height",
                self.flywheel_height,
                self.flywheel_height > 0.0,
                "must be > 0",
            ),
            (
                "pendulum_com_height",
                self.pendulum_com_height,
                self.pendulum_com_height >= 0.0,
                "must be >= 0",
            ),
            (
                "pendulum_inertia",
                self.pendulum_inertia,
                self.pendulum_inertia >= 0.0,
                "must be >= 0",
            ),
            (
                "flywheel_inertia",
                self.flywheel_inertia,
                self.flywheel_inertia > 0.0,
                "must be > 0",
            ),
            (
                "gravity",
                self.gravity,
                self.gravity.is_finite(),
                "must be finite",
            ),
            (
                "com_vertical_accel",
                self.com_vertical_accel,
                self.gravity + self.com_vertical_accel > 0.0,
                "gravity + com_vertical_accel must be > 0",
            ),
            (
                "com_height",
                self.com_height,
                self.com_height > 0.0,
                "must be > 0",
            ),
        ];
        for (field, value, ok, reason) in checks {
            // NaN fails every comparison above, so `ok` is false for it too.
            if !ok || !value.is_finite() {
                return Err(ModelError::InvalidParameter {
                    field,
                    value,
                    reason,
                });
            }
        }
        Ok(())
    }

    /// Effective vertical acceleration `g + z̈_c`.
    #[inline]
    pub fn effective_gravity(&self) -> f64 {
        self.gravity + self.com_vertical_accel
    }

    /// Combined weight of both bodies, `(M + m)·(g + z̈_c)`.
    pub fn total_weight(&self) -> f64 {
        (self.flywheel_mass + self.pendulum_mass) * self.effective_gravity()
    }
}

/// Constants shared by every equation of motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    /// `γ = M·H² + I_p`
    pub gamma: f64,
    /// `μ = m·h + M·H`
    pub mu: f64,
    /// `ω = sqrt((g + z̈_c) / z_c)`
    pub omega: f64,
}

impl DerivedConstants {
    /// Gravity stiffness of the linearized pendulum, `μ(g + z̈_c)/γ`.
    pub fn gravity_stiffness(&self, params: &ModelParams) -> f64 {
        self.mu * params.effective_gravity() / self.gamma
    }
}

pub fn derive_constants(params: &ModelParams) -> Result<DerivedConstants, ModelError> {
    params.validate()?;
    let gamma = params.flywheel_mass * params.flywheel_height.powi(2) + params.pendulum_inertia;
    let mu = params.pendulum_mass * params.pendulum_com_height
        + params.flywheel_mass * params.flywheel_height;
    let omega = (params.effective_gravity() / params.com_height).sqrt();
    Ok(DerivedConstants { gamma, mu, omega })
}

/// Full simulated state. The controlled vector is `[theta_a, theta_a_dot,
/// theta_w_dot]`; `theta_w` is carried along for the flywheel angle limit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct State {
    pub theta_a: f64,
    pub theta_a_dot: f64,
    pub theta_w_dot: f64,
    pub theta_w: f64,
}

impl State {
    pub fn new(theta_a: f64, theta_a_dot: f64, theta_w_dot: f64, theta_w: f64) -> Self {
        Self {
            theta_a,
            theta_a_dot,
            theta_w_dot,
            theta_w,
        }
    }

    /// The controlled state `x`.
    pub fn controlled(&self) -> Vector3<f64> {
        Vector3::new(self.theta_a, self.theta_a_dot, self.theta_w_dot)
    }

    pub fn is_finite(&self) -> bool {
        self.theta_a.is_finite()
            && self.theta_a_dot.is_finite()
            && self.theta_w_dot.is_finite()
            && self.theta_w.is_finite()
    }
}

impl std::ops::Neg for State {
    type Output = State;

    fn neg(self) -> State {
        State::new(
            -self.theta_a,
            -self.theta_a_dot,
            -self.theta_w_dot,
            -self.theta_w,
        )
    }
}

/// Joint torques after saturation, with a per-channel flag recording whether
/// the clamp changed the requested value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TorqueCommand {
    pub tau_a: f64,
    pub tau_w: f64,
    pub saturated_a: bool,
    pub saturated_w: bool,
}

impl TorqueCommand {
    pub fn unsaturated(tau_a: f64, tau_w: f64) -> Self {
        Self {
            tau_a,
            tau_w,
            saturated_a: false,
            saturated_w: false,
        }
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.tau_a, self.tau_w)
    }

    pub fn any_saturated(&self) -> bool {
        self.saturated_a || self.saturated_w
    }
}

/// Angular accelerations `(θ̈_a, θ̈_w)` of the nonlinear plant.
///
/// Solves the 2×2 mass-matrix system in closed form. `sin θ_a` is kept exact.
pub fn nonlinear_accel(
    params: &ModelParams,
    consts: &DerivedConstants,
    state: &State,
    cmd: &TorqueCommand,
) -> (f64, f64) {
    nonlinear_accel_with_load(params, consts, state, cmd, 0.0)
}

/// As [`nonlinear_accel`], with an additional external generalized torque on
/// the pendulum coordinate (e.g. a horizontal push at the flywheel).
pub fn nonlinear_accel_with_load(
    params: &ModelParams,
    consts: &DerivedConstants,
    state: &State,
    cmd: &TorqueCommand,
    external_torque: f64,
) -> (f64, f64) {
    let gravity_torque = consts.mu * params.effective_gravity() * state.theta_a.sin();
    let theta_a_ddot = (cmd.tau_a - cmd.tau_w + gravity_torque + external_torque) / consts.gamma;
    let theta_w_ddot = cmd.tau_w / params.flywheel_inertia - theta_a_ddot;
    (theta_a_ddot, theta_w_ddot)
}

/// Left-hand side of the Euler-Lagrange equations, i.e. the torques that
/// produce the given accelerations. Inverse of [`nonlinear_accel`].
pub fn inverse_dynamics(
    params: &ModelParams,
    consts: &DerivedConstants,
    theta_a: f64,
    theta_a_ddot: f64,
    theta_w_ddot: f64,
) -> (f64, f64) {
    let iw = params.flywheel_inertia;
    let mass = Matrix2::new(consts.gamma + iw, iw, iw, iw);
    let lhs = mass * Vector2::new(theta_a_ddot, theta_w_ddot)
        - Vector2::new(consts.mu * params.effective_gravity() * theta_a.sin(), 0.0);
    (lhs[0], lhs[1])
}

/// Mechanical energy of the unforced plant (kinetic plus gravitational).
pub fn energy(params: &ModelParams, consts: &DerivedConstants, state: &State) -> f64 {
    let absolute_flywheel_rate = state.theta_a_dot + state.theta_w_dot;
    0.5 * consts.gamma * state.theta_a_dot.powi(2)
        + 0.5 * params.flywheel_inertia * absolute_flywheel_rate.powi(2)
        + consts.mu * params.effective_gravity() * state.theta_a.cos()
}

/// Linearized plant `ẋ = A x + B u` with DCM output `y = C x + D u`,
/// `x = [θ_a, θ̇_a, θ̇_w]`, `u = [τ_a, τ_w]`, `y = [ζ, ζ̇]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPlant {
    pub a: Matrix3<f64>,
    pub b: Matrix3x2<f64>,
    pub c: Matrix2x3<f64>,
    pub d: Matrix2<f64>,
}

pub fn linearize(params: &ModelParams, consts: &DerivedConstants) -> LinearPlant {
    let DerivedConstants { gamma, omega, .. } = *consts;
    let stiffness = consts.gravity_stiffness(params);
    let height = params.flywheel_height;
    let iw = params.flywheel_inertia;

    let a = Matrix3::new(
        0.0, 1.0, 0.0, //
        stiffness, 0.0, 0.0, //
        -stiffness, 0.0, 0.0,
    );
    let b = Matrix3x2::new(
        0.0,
        0.0, //
        1.0 / gamma,
        -1.0 / gamma, //
        -1.0 / gamma,
        (gamma + iw) / (gamma * iw),
    );
    // The rate row is the chain rule of ζ = H·θ_a + (H/ω)·θ̇_a through the
    // linear dynamics: ζ̇ = H·θ̇_a + (H/ω)·θ̈_a.
    let c = Matrix2x3::new(
        height,
        height / omega,
        0.0, //
        height * stiffness / omega,
        height,
        0.0,
    );
    let feed = height / (omega * gamma);
    let d = Matrix2::new(
        0.0, 0.0, //
        feed, -feed,
    );
    LinearPlant { a, b, c, d }
}

/// `A·x + B·u`.
pub fn linear_accel(plant: &LinearPlant, x: &Vector3<f64>, u: &Vector2<f64>) -> Vector3<f64> {
    plant.a * x + plant.b * u
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn defaults() -> (ModelParams, DerivedConstants) {
        let p = ModelParams::default();
        let c = derive_constants(&p).unwrap();
        (p, c)
    }

    #[test]
    fn default_constants() {
        let (_, c) = defaults();
        assert_relative_eq!(c.gamma, 6.5, max_relative = 1e-15);
        assert_relative_eq!(c.mu, 8.8, max_relative = 1e-15);
        assert_relative_eq!(c.omega, (9.81f64 / 0.8).sqrt(), max_relative = 1e-15);
        assert!((c.omega - 3.501785).abs() < 1e-6);
    }

    #[test]
    fn pure_lip_limit() {
        let p = ModelParams {
            flywheel_mass: 10.0,
            pendulum_mass: 0.0,
            flywheel_height: 1.0,
            pendulum_com_height: 0.37,
            pendulum_inertia: 0.0,
            com_height: 1.0,
            ..ModelParams::default()
        };
        let c = derive_constants(&p).unwrap();
        assert_eq!(c.gamma, 10.0);
        assert_eq!(c.mu, 10.0);
        assert_relative_eq!(
            c.gravity_stiffness(&p),
            c.omega.powi(2),
            max_relative = 1e-15
        );
    }

    #[test]
    fn invalid_parameters_name_the_field() {
        let cases: [(&str, ModelParams); 5] = [
            (
                "flywheel_mass",
                ModelParams {
                    flywheel_mass: 0.0,
                    ..Default::default()
                },
            ),
            (
                "pendulum_mass",
                ModelParams {
                    pendulum_mass: -1.0,
                    ..Default::default()
                },
            ),
            (
                "flywheel_inertia",
                ModelParams {
                    flywheel_inertia: 0.0,
                    ..Default::default()
                },
            ),
            (
                "com_vertical_accel",
                ModelParams {
                    com_vertical_accel: -9.81,
                    ..Default::default()
                },
            ),
            (
                "com_height",
                ModelParams {
                    com_height: f64::NAN,
                    ..Default::default()
                },
            ),
        ];
        for (name, p) in cases {
            match derive_constants(&p) {
                Err(ModelError::InvalidParameter { field, .. }) => assert_eq!(field, name),
                other => panic!("expected error for {name}, got {other:?}"),
            }
        }
    }

    #[test]
    fn nonlinear_accel_examples() {
        let (p, c) = defaults();
        let (a, w) = nonlinear_accel(&p, &c, &State::default(), &TorqueCommand::default());
        assert_eq!((a, w), (0.0, 0.0));

        let lean = State::new(0.1, 0.0, 0.0, 0.0);
        let (a, w) = nonlinear_accel(&p, &c, &lean, &TorqueCommand::default());
        let expected = 8.8 * 9.81 * 0.1f64.sin() / 6.5;
        assert_relative_eq!(a, expected, max_relative = 1e-14);
        assert!((a - 1.325911).abs() < 1e-6);
        assert_relative_eq!(w, -expected, max_relative = 1e-14);

        let (a, w) = nonlinear_accel(
            &p,
            &c,
            &State::default(),
            &TorqueCommand::unsaturated(1.0, 1.0),
        );
        assert_eq!(a, 0.0);
        assert_relative_eq!(w, 20.0, max_relative = 1e-14);
    }

    #[test]
    fn linearize_examples() {
        let (p, c) = defaults();
        let plant = linearize(&p, &c);
        let s = 8.8 * 9.81 / 6.5;
        assert_relative_eq!(plant.a[(1, 0)], s, max_relative = 1e-15);
        assert_relative_eq!(plant.a[(2, 0)], -s, max_relative = 1e-15);
        assert!((s - 13.28123).abs() < 1e-5);
        assert_eq!(plant.a[(0, 1)], 1.0);
        assert_eq!(plant.a.iter().filter(|v| **v != 0.0).count(), 3);

        assert_relative_eq!(plant.b[(1, 0)], 1.0 / 6.5, max_relative = 1e-15);
        assert_relative_eq!(plant.b[(1, 1)], -1.0 / 6.5, max_relative = 1e-15);
        assert_relative_eq!(plant.b[(2, 0)], -1.0 / 6.5, max_relative = 1e-15);
        assert_relative_eq!(plant.b[(2, 1)], 6.55 / 0.325, max_relative = 1e-14);
        assert!((plant.b[(2, 1)] - 20.15384).abs() < 1e-5);

        assert_eq!(plant.c[(0, 0)], 0.8);
        assert!((plant.c[(0, 1)] - 0.228455).abs() < 1e-6);
        assert_eq!(plant.c[(0, 2)], 0.0);
    }

    #[test]
    fn linear_accel_examples() {
        let (p, c) = defaults();
        let plant = linearize(&p, &c);
        assert_eq!(
            linear_accel(&plant, &Vector3::zeros(), &Vector2::zeros()),
            Vector3::zeros()
        );
        let xd = linear_accel(&plant, &Vector3::new(0.1, 0.0, 0.0), &Vector2::zeros());
        assert_eq!(xd[0], 0.0);
        assert!((xd[1] - 1.328123).abs() < 1e-6);
        assert!((xd[2] + 1.328123).abs() < 1e-6);

        let state = State::new(1e-3, 0.4, -2.0, 0.0);
        let cmd = TorqueCommand::unsaturated(3.0, -1.0);
        let (nl, _) = nonlinear_accel(&p, &c, &state, &cmd);
        let lin = linear_accel(&plant, &state.controlled(), &cmd.as_vector());
        assert!((nl - lin[1]).abs() <= 1e-8);
    }

    #[test]
    fn inverse_dynamics_round_trip() {
        let (p, c) = defaults();
        let state = State::new(0.3, -0.2, 1.0, 0.0);
        let cmd = TorqueCommand::unsaturated(-4.0, 2.5);
        let (a, w) = nonlinear_accel(&p, &c, &state, &cmd);
        let (ta, tw) = inverse_dynamics(&p, &c, state.theta_a, a, w);
        assert_relative_eq!(ta, -4.0, max_relative = 1e-12);
        assert_relative_eq!(tw, 2.5, max_relative = 1e-12);
    }
}
