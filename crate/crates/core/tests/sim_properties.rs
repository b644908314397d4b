mod common;

use lippfm::dcm::TriggerReason;
use lippfm::model::{derive_constants, ModelParams, State};
use lippfm::sim::{
    run_episode, Channel, Classification, Disturbance, EpisodeConfig, EventKind, Simulator,
};
use nalgebra::Vector3;
use proptest::prelude::*;

fn short(initial: State) -> EpisodeConfig {
    EpisodeConfig {
        initial_state: initial,
        duration: 2.0,
        ..EpisodeConfig::default()
    }
}

fn disturbance_strategy() -> impl Strategy<Value = Disturbance> {
    prop_oneof![
        Just(Disturbance::None),
        (0.0f64..1.0, -1.0f64..1.0).prop_map(|(t0, d)| Disturbance::Impulse {
            t0,
            delta_theta_a_dot: d
        }),
        (0.0f64..1.0, 0.0f64..0.5, -60.0f64..60.0).prop_map(|(t0, duration, force)| {
            Disturbance::Force {
                t0,
                duration,
                force,
            }
        }),
    ]
}

#[test]
fn breach_at_start_steps_immediately() {
    let p = ModelParams::default();
    let consts = derive_constants(&p).unwrap();
    let x_max = EpisodeConfig::default().controller.rules.support.x_max;
    // ζ(0) = (H/ω)·θ̇_a with zero lean; aim 10 % past the toe.
    let rate = 1.1 * x_max * consts.omega / p.flywheel_height;
    let result = run_episode(&p, &short(State::new(0.0, rate, 0.0, 0.0))).unwrap();
    let first = result
        .events
        .iter()
        .find(|e| matches!(e.kind, EventKind::Step { .. }))
        .unwrap();
    assert_eq!(first.t, 0.0);
    match first.kind {
        EventKind::Step {
            reason, relocated, ..
        } => {
            assert_eq!(reason, TriggerReason::DcmOutsideSupport);
            assert!(!relocated);
        }
        _ => unreachable!(),
    }
    assert_eq!(result.classification, Classification::StepRequired);
}

#[test]
fn step_cap_ends_the_episode_without_relocating() {
    let p = ModelParams::default();
    let config = EpisodeConfig {
        initial_state: State::new(0.0, 0.6, 0.0, 0.0),
        stop_on_step: false,
        max_steps: 0,
        ..EpisodeConfig::default()
    };
    let result = run_episode(&p, &config).unwrap();
    let steps: Vec<_> = result.steps().collect();
    assert_eq!(steps.len(), 1);
    assert!(matches!(
        steps[0].kind,
        EventKind::Step {
            relocated: false,
            ..
        }
    ));
    assert_eq!(result.classification, Classification::StepRequired);
    assert_eq!(result.final_base_position(), 0.0);
}

#[test]
fn relocation_shifts_the_dcm_by_the_landing_offset() {
    let p = ModelParams::default();
    let config = EpisodeConfig {
        initial_state: State::new(0.0, 0.6, 0.0, 0.0),
        stop_on_step: false,
        ..EpisodeConfig::default()
    };
    let result = run_episode(&p, &config).unwrap();
    let landing = match result.steps().next().unwrap().kind {
        EventKind::Step {
            landing_offset,
            relocated: true,
            ..
        } => landing_offset,
        ref other => panic!("unexpected {other:?}"),
    };
    let consts = derive_constants(&p).unwrap();
    let zeta0 = p.flywheel_height * 0.6 / consts.omega;
    let first = &result.samples[0];
    assert_eq!(first.base_position, landing);
    assert!((first.dcm.zeta - (zeta0 - landing)).abs() <= 1e-12);
    assert_eq!(result.classification, Classification::StepRecovered);
}

#[test]
fn constant_tracking_reference_matches_plain_run() {
    let p = ModelParams::default();
    let sim = Simulator::new(&p, &EpisodeConfig::default().controller.weights).unwrap();
    let mut config = short(State::new(0.03, -0.1, 0.0, 0.0));
    config.controller.x_ref = Vector3::new(0.01, 0.0, 0.0);
    let plain = sim.run(&config).unwrap();
    let tracked = sim
        .run_tracking(&config, |_| Vector3::new(0.01, 0.0, 0.0))
        .unwrap();
    assert_eq!(plain, tracked);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn identical_configs_give_identical_results(
        theta in -0.2f64..0.2,
        rate in -1.0f64..1.0,
        d in disturbance_strategy(),
        stop in any::<bool>(),
    ) {
        let p = ModelParams::default();
        let config = EpisodeConfig { disturbance: d, stop_on_step: stop, ..short(State::new(theta, rate, 0.0, 0.0)) };
        let a = run_episode(&p, &config).unwrap();
        let b = run_episode(&p, &config).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mirrored_episode_is_negated_sample_for_sample(
        theta in -0.25f64..0.25,
        rate in -1.2f64..1.2,
        wd in -2.0f64..2.0,
        d in disturbance_strategy(),
        stop in any::<bool>(),
    ) {
        let p = ModelParams::default();
        let config = EpisodeConfig { disturbance: d, stop_on_step: stop, ..short(State::new(theta, rate, wd, 0.0)) };
        let a = run_episode(&p, &config).unwrap();
        let b = run_episode(&p, &config.mirrored()).unwrap();
        prop_assert_eq!(a.classification, b.classification);
        prop_assert_eq!(a.samples.len(), b.samples.len());
        for (x, y) in a.samples.iter().zip(&b.samples) {
            prop_assert_eq!(x.t, y.t);
            prop_assert_eq!(x.state, -y.state);
            prop_assert_eq!((x.torque.tau_a, x.torque.tau_w), (-y.torque.tau_a, -y.torque.tau_w));
            prop_assert_eq!(x.dcm, -y.dcm);
            prop_assert_eq!(x.base_position, -y.base_position);
        }
    }

    #[test]
    fn events_are_ordered_and_saturation_alternates(
        theta in -0.3f64..0.3,
        rate in -1.5f64..1.5,
        d in disturbance_strategy(),
        stop in any::<bool>(),
    ) {
        let p = ModelParams::default();
        let config = EpisodeConfig { disturbance: d, stop_on_step: stop, ..short(State::new(theta, rate, 0.0, 0.0)) };
        let result = run_episode(&p, &config).unwrap();
        prop_assert!(result.events.windows(2).all(|w| w[0].t <= w[1].t));
        for channel in [Channel::Ankle, Channel::Hip] {
            let mut on = false;
            for e in &result.events {
                match e.kind {
                    EventKind::SaturationOn { channel: c } if c == channel => {
                        prop_assert!(!on, "two consecutive saturation-on events");
                        on = true;
                    }
                    EventKind::SaturationOff { channel: c } if c == channel => {
                        prop_assert!(on, "saturation-off without saturation-on");
                        on = false;
                    }
                    _ => {}
                }
            }
        }
    }
}
