//! Fixed-step closed-loop simulation of the nonlinear plant.
//!
//! Each tick: check for a fall, compute the saturated LQR torque from the
//! nonlinear state, measure the DCM, run the step rule, record the sample,
//! then advance one RK4 step with the torque held constant. A step either
//! ends the episode (`stop_on_step`) or relocates the pendulum base onto the
//! landing point and carries on.
//!
//! Relocation is an instantaneous base shift by `L` with continuous rates.
//! Using the same small-angle COM position as the DCM (`x_c = H·θ_a`), the
//! lean becomes `θ_a − L/H`, so the DCM about the new base is `ζ − L`.

use std::io::{self, Write};

use nalgebra::{SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{clamp_command, lqr_gain, ControlError, LqrDesign, LqrWeights, TorqueLimits};
use crate::dcm::{decide_step, measure_dcm, DcmError, DcmSample, StepRules, TriggerReason};
use crate::model::{
    derive_constants, linearize, nonlinear_accel_with_load, DerivedConstants, LinearPlant,
    ModelError, ModelParams, State, TorqueCommand,
};
use crate::output::format_sig9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Step(#[from] DcmError),
    #[error("invalid episode setting `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("state became non-finite")]
    NonFinite,
}

/// Classical fourth-order Runge–Kutta step for an autonomous system.
pub fn rk4_step<const N: usize, F>(
    deriv: F,
    x: &SVector<f64, N>,
    dt: f64,
) -> Result<SVector<f64, N>, SimError>
where
    F: Fn(&SVector<f64, N>) -> SVector<f64, N>,
{
    let k1 = deriv(x);
    let k2 = deriv(&(x + k1 * (dt / 2.0)));
    let k3 = deriv(&(x + k2 * (dt / 2.0)));
    let k4 = deriv(&(x + k3 * dt));
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(SimError::NonFinite)
    }
}

fn pack(s: &State) -> Vector4<f64> {
    Vector4::new(s.theta_a, s.theta_a_dot, s.theta_w_dot, s.theta_w)
}

fn unpack(v: &Vector4<f64>) -> State {
    State::new(v[0], v[1], v[2], v[3])
}

/// Time derivative of `[θ_a, θ̇_a, θ̇_w, θ_w]` for a held torque and an
/// external push force (N) applied horizontally at the flywheel.
pub fn plant_derivative(
    params: &ModelParams,
    consts: &DerivedConstants,
    cmd: &TorqueCommand,
    push_force: f64,
) -> impl Fn(&Vector4<f64>) -> Vector4<f64> {
    let params = *params;
    let consts = *consts;
    let cmd = *cmd;
    move |v: &Vector4<f64>| {
        let s = unpack(v);
        let load = push_force * params.flywheel_height * s.theta_a.cos();
        let (a, w) = nonlinear_accel_with_load(&params, &consts, &s, &cmd, load);
        Vector4::new(s.theta_a_dot, a, w, s.theta_w_dot)
    }
}

/// Open-loop trajectory under constant torques, no events or controller.
pub fn simulate_open_loop(
    params: &ModelParams,
    initial: State,
    cmd: TorqueCommand,
    dt: f64,
    steps: usize,
) -> Result<Vec<State>, SimError> {
    let consts = derive_constants(params)?;
    let f = plant_derivative(params, &consts, &cmd, 0.0);
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = pack(&initial);
    out.push(initial);
    for _ in 0..steps {
        x = rk4_step(&f, &x, dt)?;
        out.push(unpack(&x));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Disturbance {
    #[default]
    None,
    /// Instantaneous change of the pendulum rate at `t0`.
    Impulse { t0: f64, delta_theta_a_dot: f64 },
    /// Horizontal force at flywheel height over `[t0, t0 + duration)`.
    Force { t0: f64, duration: f64, force: f64 },
}

impl Disturbance {
    pub fn mirrored(&self) -> Self {
        match *self {
            Disturbance::None => Disturbance::None,
            Disturbance::Impulse {
                t0,
                delta_theta_a_dot,
            } => Disturbance::Impulse {
                t0,
                delta_theta_a_dot: -delta_theta_a_dot,
            },
            Disturbance::Force {
                t0,
                duration,
                force,
            } => Disturbance::Force {
                t0,
                duration,
                force: -force,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Lean at which the robot counts as fallen (rad).
    pub theta_fall: f64,
    /// Terminal lean below which the robot counts as settled (rad).
    pub settle_theta: f64,
    /// Terminal lean rate below which the robot counts as settled (rad/s).
    pub settle_rate: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            theta_fall: 0.8,
            settle_theta: 1e-3,
            settle_rate: 1e-3,
        }
    }
}

impl Thresholds {
    pub fn is_settled(&self, s: &State) -> bool {
        s.theta_a.abs() < self.settle_theta && s.theta_a_dot.abs() < self.settle_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerSettings {
    pub weights: LqrWeights,
    pub limits: TorqueLimits,
    pub rules: StepRules,
    /// Constant state reference; see [`Simulator::run_tracking`] for a
    /// time-varying one.
    pub x_ref: Vector3<f64>,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        Self {
            weights: LqrWeights::default(),
            limits: TorqueLimits::default(),
            rules: StepRules::default(),
            x_ref: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeConfig {
    pub initial_state: State,
    pub duration: f64,
    pub dt: f64,
    pub disturbance: Disturbance,
    pub controller: ControllerSettings,
    pub thresholds: Thresholds,
    /// End the episode at the first required step instead of relocating.
    pub stop_on_step: bool,
    /// Relocations allowed before further step requests end the episode.
    pub max_steps: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            initial_state: State::default(),
            duration: 5.0,
            dt: 1e-3,
            disturbance: Disturbance::None,
            controller: ControllerSettings::default(),
            thresholds: Thresholds::default(),
            stop_on_step: true,
            max_steps: 3,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        fn bad(field: &'static str, reason: impl Into<String>) -> SimError {
            SimError::InvalidConfig {
                field,
                reason: reason.into(),
            }
        }
        if !(self.dt > 0.0 && self.dt <= 0.01) {
            return Err(bad(
                "dt",
                format!("must satisfy 0 < dt <= 0.01 (got {})", self.dt),
            ));
        }
        if !(self.duration.is_finite() && self.duration >= self.dt) {
            return Err(bad(
                "duration",
                format!("must be finite and >= dt (got {})", self.duration),
            ));
        }
        if !self.initial_state.is_finite() {
            return Err(bad("initial_state", "must be finite"));
        }
        let in_window = |t: f64| t.is_finite() && (0.0..=self.duration).contains(&t);
        match self.disturbance {
            Disturbance::None => {}
            Disturbance::Impulse {
                t0,
                delta_theta_a_dot,
            } => {
                if !in_window(t0) {
                    return Err(bad("disturbance.t0", "must lie within [0, duration]"));
                }
                if !delta_theta_a_dot.is_finite() {
                    return Err(bad("disturbance.delta_theta_a_dot", "must be finite"));
                }
            }
            Disturbance::Force {
                t0,
                duration,
                force,
            } => {
                if !in_window(t0)
                    || duration.is_nan()
                    || duration < 0.0
                    || !in_window(t0 + duration)
                {
                    return Err(bad(
                        "disturbance.t0",
                        "push window must lie within [0, duration]",
                    ));
                }
                if !force.is_finite() {
                    return Err(bad("disturbance.force", "must be finite"));
                }
            }
        }
        let limits = &self.controller.limits;
        if !(limits.tau_a_max > 0.0 && limits.tau_a_max.is_finite()) {
            return Err(bad("tau_a_max", "must be finite and > 0"));
        }
        if !(limits.tau_w_max > 0.0 && limits.tau_w_max.is_finite()) {
            return Err(bad("tau_w_max", "must be finite and > 0"));
        }
        let th = &self.thresholds;
        if !(th.theta_fall > 0.0 && th.settle_theta > 0.0 && th.settle_rate > 0.0)
            || !(th.theta_fall.is_finite()
                && th.settle_theta.is_finite()
                && th.settle_rate.is_finite())
        {
            return Err(bad(
                "thresholds",
                "theta_fall, settle_theta and settle_rate must be finite and > 0",
            ));
        }
        if !self.controller.x_ref.iter().all(|v| v.is_finite()) {
            return Err(bad("x_ref", "must be finite"));
        }
        self.controller.rules.validate()?;
        Ok(())
    }

    /// The mirror-image scenario: negated state, reference and disturbance,
    /// reflected support polygon.
    pub fn mirrored(&self) -> Self {
        let mut m = *self;
        m.initial_state = -self.initial_state;
        m.disturbance = self.disturbance.mirrored();
        m.controller.rules = self.controller.rules.mirrored();
        m.controller.x_ref = -self.controller.x_ref;
        m
    }

    pub fn tick_count(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    Ankle,
    Hip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum EventKind {
    SaturationOn {
        channel: Channel,
    },
    SaturationOff {
        channel: Channel,
    },
    DcmBreach {
        zeta: f64,
    },
    Step {
        landing_offset: f64,
        reason: TriggerReason,
        relocated: bool,
    },
    Fall {
        theta_a: f64,
    },
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Stable,
    StepRecovered,
    StepRequired,
    Fallen,
    /// The integrator produced a non-finite state.
    Diverged,
}

impl Classification {
    pub const ALL: [Classification; 5] = [
        Classification::Stable,
        Classification::StepRecovered,
        Classification::StepRequired,
        Classification::Fallen,
        Classification::Diverged,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Stable => "stable",
            Classification::StepRecovered => "step-recovered",
            Classification::StepRequired => "step-required",
            Classification::Fallen => "fallen",
            Classification::Diverged => "diverged",
        }
    }

    pub fn is_stable(&self) -> bool {
        matches!(self, Classification::Stable)
    }
}

impl std::str::FromStr for Classification {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Classification::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown classification `{s}`"))
    }
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: State,
    pub torque: TorqueCommand,
    pub dcm: DcmSample,
    /// Position of the pendulum base relative to where the episode started.
    pub base_position: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub classification: Classification,
    pub terminal_state: State,
}

impl EpisodeResult {
    pub fn saturation_event_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::SaturationOn { .. }))
            .count()
    }

    pub fn steps(&self) -> impl Iterator<Item = &Event> {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Step { .. }))
    }

    pub fn first_step_time(&self) -> Option<f64> {
        self.steps().next().map(|e| e.t)
    }

    pub fn max_abs_tau_a(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.torque.tau_a.abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_zeta(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.dcm.zeta.abs())
            .fold(0.0, f64::max)
    }

    pub fn final_base_position(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.base_position)
    }

    /// Time after which the lean stays inside the settle thresholds.
    pub fn settle_time(&self, thresholds: &Thresholds) -> Option<f64> {
        let last_unsettled = self
            .samples
            .iter()
            .rposition(|s| !thresholds.is_settled(&s.state));
        match last_unsettled {
            None => self.samples.first().map(|s| s.t),
            Some(i) => self.samples.get(i + 1).map(|s| s.t),
        }
    }

    /// The time that characterizes the outcome: settling for `stable`,
    /// the first step for step classes, the abort for `fallen`/`diverged`.
    pub fn event_time(&self, thresholds: &Thresholds) -> Option<f64> {
        match self.classification {
            Classification::Stable => self.settle_time(thresholds),
            Classification::StepRecovered | Classification::StepRequired => self
                .first_step_time()
                .or_else(|| self.samples.last().map(|s| s.t)),
            Classification::Fallen | Classification::Diverged => self.samples.last().map(|s| s.t),
        }
    }

    /// One row per sample: `t, theta_a, theta_a_dot, theta_w_dot, theta_w,
    /// tau_a, tau_w, sat_a, sat_w, zeta, zeta_dot`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "t,theta_a,theta_a_dot,theta_w_dot,theta_w,tau_a,tau_w,sat_a,sat_w,zeta,zeta_dot"
        )?;
        for s in &self.samples {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                format_sig9(s.t),
                format_sig9(s.state.theta_a),
                format_sig9(s.state.theta_a_dot),
                format_sig9(s.state.theta_w_dot),
                format_sig9(s.state.theta_w),
                format_sig9(s.torque.tau_a),
                format_sig9(s.torque.tau_w),
                u8::from(s.torque.saturated_a),
                u8::from(s.torque.saturated_w),
                format_sig9(s.dcm.zeta),
                format_sig9(s.dcm.zeta_dot),
            )?;
        }
        Ok(())
    }

    pub fn summary_json(&self, thresholds: &Thresholds) -> serde_json::Value {
        serde_json::json!({
            "classification": self.classification,
            "terminal_state": self.terminal_state,
            "final_base_position": self.final_base_position(),
            "samples": self.samples.len(),
            "saturation_events": self.saturation_event_count(),
            "steps": self.steps().count(),
            "max_abs_tau_a": self.max_abs_tau_a(),
            "max_abs_zeta": self.max_abs_zeta(),
            "t_event": self.event_time(thresholds),
            "events": self.events,
        })
    }
}

/// Outcome rules, applied to a finished (or aborted) episode.
///
/// `diverged` and `fallen` take precedence; a step whose relocation was
/// suppressed is `step-required`; otherwise a settled terminal lean is
/// `stable` (no steps) or `step-recovered`, and an unsettled one is
/// `step-required`.
pub fn classify(samples: &[Sample], events: &[Event], thresholds: &Thresholds) -> Classification {
    if events
        .iter()
        .any(|e| matches!(e.kind, EventKind::NonFinite))
    {
        return Classification::Diverged;
    }
    let fell = events
        .iter()
        .any(|e| matches!(e.kind, EventKind::Fall { .. }))
        || samples
            .iter()
            .any(|s| s.state.theta_a.abs() >= thresholds.theta_fall);
    if fell {
        return Classification::Fallen;
    }
    let mut stepped = false;
    for e in events {
        if let EventKind::Step { relocated, .. } = e.kind {
            if !relocated {
                return Classification::StepRequired;
            }
            stepped = true;
        }
    }
    let settled = samples
        .last()
        .is_some_and(|s| thresholds.is_settled(&s.state));
    match (settled, stepped) {
        (true, false) => Classification::Stable,
        (true, true) => Classification::StepRecovered,
        (false, _) => Classification::StepRequired,
    }
}

/// A plant with its LQR design, reusable across episodes that share the
/// model and weights.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub params: ModelParams,
    pub consts: DerivedConstants,
    pub plant: LinearPlant,
    pub design: LqrDesign,
}

impl Simulator {
    pub fn new(params: &ModelParams, weights: &LqrWeights) -> Result<Self, SimError> {
        let consts = derive_constants(params)?;
        let plant = linearize(params, &consts);
        let design = lqr_gain(&plant, weights)?;
        Ok(Self {
            params: *params,
            consts,
            plant,
            design,
        })
    }

    pub fn run(&self, config: &EpisodeConfig) -> Result<EpisodeResult, SimError> {
        let x_ref = config.controller.x_ref;
        self.run_tracking(config, |_| x_ref)
    }

    /// Runs an episode tracking a caller-supplied reference `x_ref(t)`.
    /// The weights in `config` are ignored; the simulator's design is used.
    pub fn run_tracking<R>(
        &self,
        config: &EpisodeConfig,
        reference: R,
    ) -> Result<EpisodeResult, SimError>
    where
        R: Fn(f64) -> Vector3<f64>,
    {
        config.validate()?;
        Episode::new(self, config).run(reference)
    }
}

pub fn run_episode(
    params: &ModelParams,
    config: &EpisodeConfig,
) -> Result<EpisodeResult, SimError> {
    config.validate()?;
    Simulator::new(params, &config.controller.weights)?.run(config)
}

struct Episode<'a> {
    sim: &'a Simulator,
    cfg: &'a EpisodeConfig,
    state: State,
    base_position: f64,
    samples: Vec<Sample>,
    events: Vec<Event>,
    saturated: [bool; 2],
    sat_time: f64,
    breached: bool,
    /// Flywheel angle at the last relocation; the limit applies to the
    /// excursion since then.
    theta_w_origin: f64,
    relocations: usize,
}

impl<'a> Episode<'a> {
    fn new(sim: &'a Simulator, cfg: &'a EpisodeConfig) -> Self {
        Self {
            sim,
            cfg,
            state: cfg.initial_state,
            base_position: 0.0,
            samples: Vec::with_capacity(cfg.tick_count() + 1),
            events: Vec::new(),
            saturated: [false; 2],
            sat_time: 0.0,
            breached: false,
            theta_w_origin: 0.0,
            relocations: 0,
        }
    }

    fn push_event(&mut self, t: f64, kind: EventKind) {
        self.events.push(Event { t, kind });
    }

    fn control(&mut self, t: f64, x_ref: &Vector3<f64>) -> (TorqueCommand, DcmSample) {
        let raw = -(self.sim.design.k * (self.state.controlled() - x_ref));
        let cmd = clamp_command(raw[0], raw[1], &self.cfg.controller.limits);
        for (i, (now, channel)) in [
            (cmd.saturated_a, Channel::Ankle),
            (cmd.saturated_w, Channel::Hip),
        ]
        .into_iter()
        .enumerate()
        {
            if now != self.saturated[i] {
                let kind = if now {
                    EventKind::SaturationOn { channel }
                } else {
                    EventKind::SaturationOff { channel }
                };
                self.push_event(t, kind);
                self.saturated[i] = now;
            }
        }
        self.sat_time = if cmd.any_saturated() {
            self.sat_time + self.cfg.dt
        } else {
            0.0
        };
        let dcm = measure_dcm(&self.sim.plant, &self.state.controlled(), &cmd.as_vector());
        (cmd, dcm)
    }

    fn finish(self) -> EpisodeResult {
        let classification = classify(&self.samples, &self.events, &self.cfg.thresholds);
        EpisodeResult {
            terminal_state: self.state,
            samples: self.samples,
            events: self.events,
            classification,
        }
    }

    fn run<R: Fn(f64) -> Vector3<f64>>(mut self, reference: R) -> Result<EpisodeResult, SimError> {
        let cfg = self.cfg;
        let rules = &cfg.controller.rules;
        let n = cfg.tick_count();
        let height = self.sim.params.flywheel_height;
        let impulse_tick = match cfg.disturbance {
            Disturbance::Impulse {
                t0,
                delta_theta_a_dot,
            } => Some(((t0 / cfg.dt).round() as usize, delta_theta_a_dot)),
            _ => None,
        };

        for tick in 0..=n {
            let t = tick as f64 * cfg.dt;
            if let Some((k, delta)) = impulse_tick {
                if k == tick {
                    self.state.theta_a_dot += delta;
                }
            }
            if self.state.theta_a.abs() >= cfg.thresholds.theta_fall {
                let theta_a = self.state.theta_a;
                self.push_event(t, EventKind::Fall { theta_a });
                break;
            }

            let x_ref = reference(t);
            let (mut cmd, mut dcm) = self.control(t, &x_ref);

            let outside = !rules.support.contains(dcm.zeta);
            if outside && !self.breached {
                self.push_event(t, EventKind::DcmBreach { zeta: dcm.zeta });
            }
            self.breached = outside;

            let decision = decide_step(
                &dcm,
                rules,
                self.sat_time,
                self.state.theta_w - self.theta_w_origin,
            );
            if let Some(reason) = decision.trigger_reason {
                let relocate = !cfg.stop_on_step && self.relocations < cfg.max_steps;
                self.push_event(
                    t,
                    EventKind::Step {
                        landing_offset: decision.landing_offset,
                        reason,
                        relocated: relocate,
                    },
                );
                if !relocate {
                    self.samples.push(Sample {
                        t,
                        state: self.state,
                        torque: cmd,
                        dcm,
                        base_position: self.base_position,
                    });
                    return Ok(self.finish());
                }
                self.relocations += 1;
                self.base_position += decision.landing_offset;
                self.state.theta_a -= decision.landing_offset / height;
                self.theta_w_origin = self.state.theta_w;
                self.sat_time = 0.0;
                (cmd, dcm) = self.control(t, &x_ref);
                self.breached = !rules.support.contains(dcm.zeta);
            }

            self.samples.push(Sample {
                t,
                state: self.state,
                torque: cmd,
                dcm,
                base_position: self.base_position,
            });
            if tick == n {
                break;
            }

            let push = match cfg.disturbance {
                Disturbance::Force {
                    t0,
                    duration,
                    force,
                } if t >= t0 && t < t0 + duration => force,
                _ => 0.0,
            };
            let f = plant_derivative(&self.sim.params, &self.sim.consts, &cmd, push);
            match rk4_step(f, &pack(&self.state), cfg.dt) {
                Ok(next) => self.state = unpack(&next),
                Err(_) => {
                    self.push_event(t + cfg.dt, EventKind::NonFinite);
                    break;
                }
            }
        }
        Ok(self.finish())
    }
}
