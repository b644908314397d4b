//! Helpers shared by the integration test targets. Each target compiles this
//! module separately, so not every helper is used everywhere.
#![allow(dead_code)]

use lippfm::model::{ModelParams, State};
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x2};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;

/// Physically plausible parameter sets, including a nonzero vertical
/// acceleration of either sign.
pub fn params_strategy() -> impl Strategy<Value = ModelParams> {
    (
        (0.5f64..50.0, 0.0f64..20.0, 0.2f64..2.0, 0.1f64..1.0),
        (
            0.0f64..2.0,
            0.005f64..1.0,
            9.0f64..10.5,
            -3.0f64..3.0,
            0.2f64..2.0,
        ),
    )
        .prop_map(
            |((big_m, small_m, big_h, h_frac), (i_p, i_w, g, z_dd, z_c))| ModelParams {
                flywheel_mass: big_m,
                pendulum_mass: small_m,
                flywheel_height: big_h,
                pendulum_com_height: h_frac * big_h,
                pendulum_inertia: i_p,
                flywheel_inertia: i_w,
                gravity: g,
                com_vertical_accel: z_dd,
                com_height: z_c,
            },
        )
}

pub fn state_strategy(theta_bound: f64, rate_bound: f64) -> impl Strategy<Value = State> {
    (
        -theta_bound..theta_bound,
        -rate_bound..rate_bound,
        -rate_bound..rate_bound,
        -1.0f64..1.0,
    )
        .prop_map(|(a, ad, wd, w)| State::new(a, ad, wd, w))
}

/// Draws `n` values from a strategy with a fixed seed.
pub fn sample<S: Strategy>(strategy: S, n: usize) -> Vec<S::Value> {
    let mut runner = TestRunner::deterministic();
    (0..n)
        .map(|_| strategy.new_tree(&mut runner).expect("strategy").current())
        .collect()
}

/// Linear plant matrices written out from the model equations, independent
/// of the library's `linearize`.
pub struct ClosedForm {
    pub a: Matrix3<f64>,
    pub b: Matrix3x2<f64>,
    pub c: Matrix2x3<f64>,
    pub d: Matrix2<f64>,
}

pub fn closed_form(p: &ModelParams) -> ClosedForm {
    let gamma = p.flywheel_mass * p.flywheel_height.powi(2) + p.pendulum_inertia;
    let mu = p.pendulum_mass * p.pendulum_com_height + p.flywheel_mass * p.flywheel_height;
    let g_eff = p.gravity + p.com_vertical_accel;
    let omega = (g_eff / p.com_height).sqrt();
    let s = mu * g_eff / gamma;
    let h = p.flywheel_height;
    let iw = p.flywheel_inertia;
    ClosedForm {
        a: Matrix3::new(0.0, 1.0, 0.0, s, 0.0, 0.0, -s, 0.0, 0.0),
        b: Matrix3x2::new(
            0.0,
            0.0,
            1.0 / gamma,
            -1.0 / gamma,
            -1.0 / gamma,
            (gamma + iw) / (gamma * iw),
        ),
        c: Matrix2x3::new(h, h / omega, 0.0, h * s / omega, h, 0.0),
        d: Matrix2::new(0.0, 0.0, h / (omega * gamma), -h / (omega * gamma)),
    }
}

/// Entry-wise relative mismatch; zero entries must match exactly.
pub fn max_rel_err<'a>(
    got: impl IntoIterator<Item = &'a f64>,
    want: impl IntoIterator<Item = &'a f64>,
) -> f64 {
    got.into_iter()
        .zip(want)
        .map(|(g, w)| {
            if *w == 0.0 {
                if *g == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (g - w).abs() / w.abs()
            }
        })
        .fold(0.0, f64::max)
}
