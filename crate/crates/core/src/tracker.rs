//! Receding-horizon tracking of a nominal plan.
//!
//! Each control step re-optimizes a short window of continuous inputs,
//! warm-started from the plan, against the plan's tip poses, and emits only
//! the first input. Bevel flips are left to the bang-bang controller.

use std::convert::Infallible;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ce::{self, CeDistribution, CeParams};
use crate::error::{CeError, ConfigError, SimError, TrackError};
use crate::planner::{NominalTrajectory, INFEASIBLE_COST};
use crate::seed::mix_seed;
use crate::sim::{ControlInput, Flip, Pose2, SimState, Simulator};

/// Weights of the squared SE(2) deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Se2Weight {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Default for Se2Weight {
    fn default() -> Self {
        Self {
            x: 1.0,
            y: 1.0,
            theta: 100.0,
        }
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

pub fn se2_deviation(pose: &Pose2, nominal: &Pose2, w: &Se2Weight) -> f64 {
    let dx = pose.x - nominal.x;
    let dy = pose.y - nominal.y;
    let dt = wrap_angle(pose.theta - nominal.theta);
    w.x * dx * dx + w.y * dy * dy + w.theta * dt * dt
}

/// `Σ se2_deviation · dt` over paired poses.
///
/// # Panics
/// If the sequences differ in length.
pub fn tracking_cost(rollout: &[Pose2], nominal: &[Pose2], w: &Se2Weight, dt: f64) -> f64 {
    assert_eq!(rollout.len(), nominal.len(), "pose sequences differ in length");
    rollout
        .iter()
        .zip(nominal)
        .map(|(p, n)| se2_deviation(p, n, w) * dt)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackSettings {
    /// Window length in steps.
    pub window: usize,
    /// Re-initialisation spread around the warm start (mm).
    pub advance_sd: f64,
    pub guide_sd: f64,
    pub weights: Se2Weight,
    /// Heading weight multiplier while the tip is near the skin.
    pub entry_heading_boost: f64,
    /// Distance from the skin plane inside which the boost applies (mm).
    pub entry_zone: f64,
    /// Largest accepted jump between model tip and a measurement (mm).
    pub max_feedback_jump: f64,
}

impl Default for TrackSettings {
    fn default() -> Self {
        Self {
            window: 5,
            advance_sd: 0.2,
            guide_sd: 0.3,
            weights: Se2Weight::default(),
            entry_heading_boost: 10.0,
            entry_zone: 5.0,
            max_feedback_jump: 10.0,
        }
    }
}

impl TrackSettings {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.window == 0 {
            return Err(ConfigError::invalid("tracker.window", "must be at least 1"));
        }
        let w = &self.weights;
        let values = [
            ("tracker.advance_sd", self.advance_sd),
            ("tracker.guide_sd", self.guide_sd),
            ("tracker.weights.x", w.x),
            ("tracker.weights.y", w.y),
            ("tracker.weights.theta", w.theta),
            ("tracker.entry_heading_boost", self.entry_heading_boost),
            ("tracker.entry_zone", self.entry_zone),
        ];
        for (k, v) in values {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(k, "must be non-negative"));
            }
        }
        if !(self.max_feedback_jump > 0.0) {
            return Err(ConfigError::invalid("tracker.max_feedback_jump", "must be positive"));
        }
        Ok(())
    }

    fn weights_at(&self, pose: &Pose2, skin_x: f64) -> Se2Weight {
        let mut w = self.weights;
        if (pose.x - skin_x).abs() <= self.entry_zone {
            w.theta *= self.entry_heading_boost;
        }
        w
    }
}

/// Window cost with the near-skin heading boost applied per pose.
fn window_cost(rollout: &[Pose2], nominal: &[Pose2], settings: &TrackSettings, skin_x: f64, dt: f64) -> f64 {
    rollout
        .iter()
        .zip(nominal)
        .map(|(p, n)| se2_deviation(p, n, &settings.weights_at(n, skin_x)) * dt)
        .sum()
}

/// Chooses the continuous input for step `start` of `nominal`.
///
/// The window covers `min(window, remaining)` steps. Samples perturb the
/// nominal advance and guide inputs; window flips follow the plan. The
/// returned flip is always `Keep`.
pub fn track_step(
    sim: &Simulator,
    estimate: &SimState,
    nominal: &NominalTrajectory,
    start: usize,
    settings: &TrackSettings,
    ce: &CeParams,
) -> Result<ControlInput, TrackError> {
    let first = nominal.controls.get(start).map_or(Flip::Keep, |u| u.flip);
    track_step_with_flip(sim, estimate, nominal, start, settings, ce, first)
}

/// As [`track_step`], with the flip applied at `start` already decided.
///
/// The closed loop commits the bang-bang flip first so the window rollouts
/// see the bevel the needle will actually have.
pub fn track_step_with_flip(
    sim: &Simulator,
    estimate: &SimState,
    nominal: &NominalTrajectory,
    start: usize,
    settings: &TrackSettings,
    ce: &CeParams,
    first_flip: Flip,
) -> Result<ControlInput, TrackError> {
    settings.validate()?;
    let horizon = nominal.controls.len();
    if start >= horizon {
        return Err(TrackError::BadWindow { start, horizon });
    }
    let len = settings.window.min(horizon - start);
    let warm = &nominal.controls[start..start + len];
    let reference: Vec<Pose2> = nominal.states[start..=start + len].iter().map(|s| s.tip()).collect();

    let mut mean = Vec::with_capacity(2 * len);
    let mut sd = Vec::with_capacity(2 * len);
    for u in warm {
        mean.extend([u.advance, u.guide_shift]);
        sd.extend([settings.advance_sd, settings.guide_sd]);
    }
    let init = CeDistribution::diagonal(&mean, &sd);
    let limits = sim.config().limits;
    let skin_x = sim.config().skin_x;
    let dt = nominal.dt;

    let objective = |z: &[f64]| -> Result<f64, Infallible> {
        let mut s = estimate.clone();
        let mut poses = Vec::with_capacity(len + 1);
        poses.push(s.tip());
        for (w, c) in z.chunks_exact(2).enumerate() {
            let flip = if w == 0 { first_flip } else { warm[w].flip };
            let u = ControlInput::new(c[0], c[1], flip).clamped(&limits);
            match sim.step(&s, &u) {
                Ok(next) => s = next,
                Err(_) => return Ok(INFEASIBLE_COST),
            }
            poses.push(s.tip());
        }
        Ok(window_cost(&poses, &reference, settings, skin_x, dt))
    };
    let params = CeParams {
        seed: mix_seed(ce.seed, start as u64),
        ..*ce
    };
    let result = ce::optimize(&objective, &init, &params).map_err(|e| match e {
        CeError::Config(c) => TrackError::Config(c),
        CeError::Objective(never) => match never {},
        CeError::NonFiniteCost(_) => TrackError::AllInfeasible { step: start },
    })?;
    // The warm start itself is a candidate; sampling alone never hits it.
    let warm_cost = objective(&mean).unwrap_or_else(|never| match never {});
    let (z, best_cost) = if warm_cost <= result.best_cost {
        (&mean, warm_cost)
    } else {
        (&result.best_sample, result.best_cost)
    };
    if best_cost >= INFEASIBLE_COST {
        return Err(TrackError::AllInfeasible { step: start });
    }
    Ok(ControlInput::new(z[0], z[1], Flip::Keep).clamped(&limits))
}

/// Projects a tip measurement onto the model.
///
/// The needle is re-solved with its tip held at the measured lateral
/// position; the holding force is then kept as a persistent tip load so the
/// released model stays in equilibrium at the measurement. The axial tip
/// coordinate follows from the base position and is only range-checked.
pub fn apply_feedback(
    sim: &Simulator,
    state: &SimState,
    measured: (f64, f64),
    settings: &TrackSettings,
) -> Result<SimState, SimError> {
    let (x, y) = measured;
    let tip = state.tip();
    let jump = settings.max_feedback_jump;
    if !(x.is_finite() && y.is_finite()) || (x - tip.x).abs() > jump || (y - tip.y).abs() > jump {
        return Err(SimError::OutsideWorkspace { x, y });
    }
    if y == tip.y {
        return Ok(state.clone());
    }
    let (pinned, reaction) = sim.solve_with_tip_at(state, y)?;
    let mut released = pinned;
    released.tip_load += reaction;
    sim.solve_equilibrium(&released)
}
