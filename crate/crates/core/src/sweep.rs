//! Grid sweep over initial lean and lean rate. Every cell is an independent
//! episode sharing one LQR design; results are assembled in index order, so
//! the map does not depend on how many workers ran it.

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dcm::measure_dcm;
use crate::model::{ModelParams, State};
use crate::sim::{Classification, EpisodeConfig, SimError, Simulator};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error("invalid grid axis `{axis}`: {reason}")]
    InvalidAxis { axis: &'static str, reason: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    /// A degenerate one-point axis.
    pub fn point(value: f64) -> Self {
        Self {
            min: value,
            max: value,
            count: 1,
        }
    }

    pub fn validate(&self, axis: &'static str) -> Result<(), SweepError> {
        let bad = |reason: String| Err(SweepError::InvalidAxis { axis, reason });
        if !(self.min.is_finite() && self.max.is_finite()) {
            return bad("bounds must be finite".into());
        }
        match self.count {
            0 => bad("count must be >= 1".into()),
            1 if self.min != self.max => bad("a single-point axis needs min == max".into()),
            1 => Ok(()),
            _ if self.min >= self.max => {
                bad(format!("min ({}) must be < max ({})", self.min, self.max))
            }
            _ => Ok(()),
        }
    }

    /// `value(i)` and `value(count − 1 − i)` are exact negatives when
    /// `min == −max`.
    pub fn value(&self, i: usize) -> f64 {
        if self.count <= 1 {
            return self.min;
        }
        let last = (self.count - 1) as f64;
        let i = i as f64;
        (self.min * (last - i) + self.max * i) / last
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.value(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub theta_a: f64,
    pub theta_a_dot: f64,
    pub status: Classification,
    pub max_abs_tau_a: f64,
    pub max_abs_zeta: f64,
    /// Settling time for stable cells, first step for step cells, abort
    /// time for fallen/diverged ones.
    pub t_event: f64,
    pub initial_zeta: f64,
    pub saturation_events: usize,
    pub step_events: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMap {
    pub theta_a: GridAxis,
    pub theta_a_dot: GridAxis,
    /// Row-major with `theta_a` as the outer index.
    pub cells: Vec<Cell>,
}

impl RegionMap {
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.theta_a_dot.count + j
    }

    pub fn cell(&self, i: usize, j: usize) -> &Cell {
        &self.cells[self.index(i, j)]
    }

    pub fn indexed_cells(&self) -> impl Iterator<Item = (usize, usize, &Cell)> {
        let n = self.theta_a_dot.count;
        self.cells
            .iter()
            .enumerate()
            .map(move |(k, c)| (k / n, k % n, c))
    }

    pub fn count(&self, status: Classification) -> usize {
        self.cells.iter().filter(|c| c.status == status).count()
    }

    /// Cells that break the ray property: at fixed `theta_a`, walking away
    /// from `theta_a_dot = 0` in the lean direction, a stable cell found
    /// beyond a non-stable one.
    pub fn ray_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let ny = self.theta_a_dot.count;
        for i in 0..self.theta_a.count {
            let theta_a = self.theta_a.value(i);
            let mut rays: Vec<Vec<usize>> = Vec::new();
            let up: Vec<usize> = (0..ny)
                .filter(|&j| self.theta_a_dot.value(j) >= 0.0)
                .collect();
            let mut down: Vec<usize> = (0..ny)
                .filter(|&j| self.theta_a_dot.value(j) <= 0.0)
                .collect();
            down.reverse();
            if theta_a >= 0.0 {
                rays.push(up);
            }
            if theta_a <= 0.0 {
                rays.push(down);
            }
            for ray in rays {
                let mut broken_at: Option<usize> = None;
                for j in ray {
                    let cell = self.cell(i, j);
                    match (broken_at, cell.status.is_stable()) {
                        (None, false) => broken_at = Some(j),
                        (Some(first), true) => out.push(format!(
                            "theta_a={} theta_a_dot={}: stable beyond non-stable cell at theta_a_dot={}",
                            cell.theta_a,
                            cell.theta_a_dot,
                            self.theta_a_dot.value(first)
                        )),
                        _ => {}
                    }
                }
            }
        }
        out
    }
}

/// What a sweep needs: the plant, an episode template whose initial lean and
/// rate are replaced per cell, the grid, and the worker count (0 = all cores,
/// 1 = serial).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub params: ModelParams,
    pub episode: EpisodeConfig,
    pub theta_a: GridAxis,
    pub theta_a_dot: GridAxis,
    pub jobs: usize,
}

pub fn run_sweep(spec: &SweepSpec) -> Result<RegionMap, SweepError> {
    spec.theta_a.validate("theta_a")?;
    spec.theta_a_dot.validate("theta_a_dot")?;
    spec.episode.validate()?;
    let sim = Simulator::new(&spec.params, &spec.episode.controller.weights)?;

    let ny = spec.theta_a_dot.count;
    let total = spec.theta_a.count * ny;
    let run_cell = |k: usize| {
        let theta_a = spec.theta_a.value(k / ny);
        let theta_a_dot = spec.theta_a_dot.value(k % ny);
        evaluate_cell(&sim, &spec.episode, theta_a, theta_a_dot)
    };

    let cells: Vec<Cell> = match spec.jobs {
        1 => (0..total).map(run_cell).collect(),
        0 => (0..total).into_par_iter().map(run_cell).collect(),
        n => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| SweepError::Pool(e.to_string()))?
            .install(|| (0..total).into_par_iter().map(run_cell).collect()),
    };
    Ok(RegionMap {
        theta_a: spec.theta_a,
        theta_a_dot: spec.theta_a_dot,
        cells,
    })
}

fn evaluate_cell(
    sim: &Simulator,
    template: &EpisodeConfig,
    theta_a: f64,
    theta_a_dot: f64,
) -> Cell {
    let config = EpisodeConfig {
        initial_state: State {
            theta_a,
            theta_a_dot,
            ..template.initial_state
        },
        ..*template
    };
    // Measured before the run: once a step relocates the base, the first
    // sample is already about the new foot.
    let initial_zeta = measure_dcm(
        &sim.plant,
        &config.initial_state.controlled(),
        &Vector2::zeros(),
    )
    .zeta;
    match sim.run(&config) {
        Ok(result) => Cell {
            theta_a,
            theta_a_dot,
            status: result.classification,
            max_abs_tau_a: result.max_abs_tau_a(),
            max_abs_zeta: result.max_abs_zeta(),
            t_event: result.event_time(&config.thresholds).unwrap_or(f64::NAN),
            initial_zeta,
            saturation_events: result.saturation_event_count(),
            step_events: result.steps().count(),
        },
        // The template was validated up front, so only numerical trouble
        // can land here; it is kept as a cell status rather than aborting.
        Err(_) => Cell {
            theta_a,
            theta_a_dot,
            status: Classification::Diverged,
            max_abs_tau_a: f64::NAN,
            max_abs_zeta: f64::NAN,
            t_event: f64::NAN,
            initial_zeta,
            saturation_events: 0,
            step_events: 0,
        },
    }
}
