//! Balance stabilization for the linear inverted pendulum plus flywheel
//! model: LQR torque control, divergent-component-of-motion measurement,
//! step decisions and push-recovery sweeps.

pub mod config;
pub mod control;
pub mod dcm;
pub mod linalg;
pub mod model;
pub mod output;
pub mod sim;
pub mod sweep;

pub use config::{load_config, write_resolved_config, ConfigError, SweepConfig};
pub use control::{feedback_torque, lqr_gain, solve_care, LqrDesign, LqrWeights, TorqueLimits};
pub use dcm::{decide_step, measure_dcm, DcmSample, StepDecision, StepRules, SupportPolygon};
pub use model::{
    derive_constants, linearize, DerivedConstants, LinearPlant, ModelParams, State, TorqueCommand,
};
pub use output::{emit_csv, emit_svg};
pub use sim::{run_episode, Classification, EpisodeConfig, EpisodeResult, Simulator};
pub use sweep::{run_sweep, GridAxis, RegionMap, SweepSpec};
