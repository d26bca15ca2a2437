//! Offline insertion planning with the cross-entropy optimizer.
//!
//! A plan is `m + 1` piecewise-constant controls, flattened into one
//! vector of `(advance, guide_shift, flip_surrogate)` triples. Each sample
//! is rolled out through the simulator and scored by a quadratic step cost,
//! gated on tissue contact, plus a terminal cost on targeting error and
//! tissue strain energy.

use std::convert::Infallible;

use serde::{Deserialize, Serialize};

use crate::ce::{self, CeDistribution, CeIteration, CeParams};
use crate::error::{CeError, ConfigError, PlanError, SimError};
use crate::sim::{ActuatorLimits, ControlInput, Flip, SimConfig, SimState, Simulator};

/// Cost assigned to a rollout the simulator could not complete.
pub const INFEASIBLE_COST: f64 = 1e9;

/// Point in the insertion plane (mm, world frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub x: f64,
    pub y: f64,
}

impl Target {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (x - self.x).hypot(y - self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanWeights {
    /// Penalty on squared nodal lateral deviation (1/mm²).
    pub deflection: f64,
    /// Penalty on squared guide translation per step (1/mm²).
    pub guide: f64,
    /// Penalty per bevel flip.
    pub flip: f64,
    /// Terminal weight on tip-to-target distance (1/mm).
    pub targeting: f64,
    /// Terminal weight on tissue strain energy (1/Pa).
    pub strain: f64,
}

impl Default for PlanWeights {
    fn default() -> Self {
        Self {
            deflection: 1e-3,
            guide: 1.0,
            flip: 0.1,
            targeting: 10.0,
            strain: 1e-3,
        }
    }
}

impl PlanWeights {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (k, v) in [
            ("deflection", self.deflection),
            ("guide", self.guide),
            ("flip", self.flip),
            ("targeting", self.targeting),
            ("strain", self.strain),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(format!("weights.{k}"), "must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Initial sampling spread per control channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSpread {
    pub advance_sd: f64,
    pub guide_sd: f64,
    /// Initial mean of the flip surrogate; negative favours keeping the bevel.
    pub flip_mean: f64,
    pub flip_sd: f64,
}

impl Default for SampleSpread {
    fn default() -> Self {
        Self {
            advance_sd: 0.1,
            guide_sd: 0.3,
            flip_mean: -1.0,
            flip_sd: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanMode {
    /// Guide translation and bevel flips are both free.
    Manipulation,
    /// Guide held still; a softened needle steers by bevel flips only.
    Steering,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanSettings {
    /// Number of control steps is `horizon + 1`.
    pub horizon: usize,
    /// Notional step duration (s); scales the running cost.
    pub dt: f64,
    pub weights: PlanWeights,
    pub spread: SampleSpread,
    /// Divisor applied to Young's modulus in steering mode.
    pub steering_softening: f64,
}

impl Default for PlanSettings {
    fn default() -> Self {
        Self {
            horizon: 60,
            dt: 0.1,
            weights: PlanWeights::default(),
            spread: SampleSpread::default(),
            steering_softening: 100.0,
        }
    }
}

impl PlanSettings {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.horizon == 0 {
            return Err(ConfigError::invalid("horizon", "must be at least 1"));
        }
        if !(self.dt > 0.0) {
            return Err(ConfigError::invalid("dt", "must be positive"));
        }
        if !(self.steering_softening >= 1.0) {
            return Err(ConfigError::invalid("steering_softening", "must be at least 1"));
        }
        let s = &self.spread;
        if [s.advance_sd, s.guide_sd, s.flip_sd].iter().any(|v| !(*v >= 0.0)) {
            return Err(ConfigError::invalid("spread", "standard deviations must be non-negative"));
        }
        self.weights.validate()
    }
}

/// Components of the planning cost.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Sum of gated step costs.
    pub running: f64,
    /// Targeting term of the terminal cost.
    pub targeting: f64,
    /// Strain-energy term of the terminal cost.
    pub strain: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.running + self.targeting + self.strain
    }
}

/// Planned controls and the states they produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalTrajectory {
    pub mode: PlanMode,
    pub target: Target,
    pub dt: f64,
    pub controls: Vec<ControlInput>,
    /// `controls.len() + 1` states, starting with the initial state.
    pub states: Vec<SimState>,
    pub cost: CostBreakdown,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<CeIteration>,
}

impl NominalTrajectory {
    pub fn final_state(&self) -> &SimState {
        self.states.last().expect("trajectory has an initial state")
    }

    pub fn final_tip_error(&self) -> f64 {
        let tip = self.final_state().tip();
        self.target.distance_to(tip.x, tip.y)
    }

    pub fn flip_count(&self) -> usize {
        self.controls.iter().filter(|u| u.flip.is_toggle()).count()
    }
}

/// Gated running cost of one step: nodal deflection, guide motion and
/// flips, counted only while the tip is in tissue.
pub fn step_cost(
    sim: &Simulator,
    state: &SimState,
    input: &ControlInput,
    weights: &PlanWeights,
    dt: f64,
) -> f64 {
    if !sim.in_tissue(state) {
        return 0.0;
    }
    let deflection: f64 = state.needle.nodes.iter().map(|p| p.y * p.y).sum();
    let flip = if input.flip.is_toggle() { 1.0 } else { 0.0 };
    (weights.deflection * deflection
        + weights.guide * input.guide_shift * input.guide_shift
        + weights.flip * flip)
        * dt
}

/// Terminal cost split into targeting and strain-energy terms.
pub fn final_cost(
    sim: &Simulator,
    state: &SimState,
    target: &Target,
    weights: &PlanWeights,
) -> Result<CostBreakdown, SimError> {
    let tip = state.tip();
    Ok(CostBreakdown {
        running: 0.0,
        targeting: weights.targeting * target.distance_to(tip.x, tip.y),
        strain: weights.strain * sim.strain_energy(state)?,
    })
}

/// Maps a flat sample to clamped controls; the flip channel toggles when
/// its surrogate is positive.
pub fn decode(z: &[f64], limits: &ActuatorLimits) -> Vec<ControlInput> {
    z.chunks_exact(3)
        .map(|c| ControlInput::new(c[0], c[1], Flip::from_surrogate(c[2])).clamped(limits))
        .collect()
}

/// Inverse of [`decode`] for controls already within limits, with the flip
/// surrogate at ±1.
pub fn encode(controls: &[ControlInput]) -> Vec<f64> {
    controls
        .iter()
        .flat_map(|u| [u.advance, u.guide_shift, f64::from(u.flip.as_i8())])
        .collect()
}

/// Runs `controls` from `initial` and evaluates the planning cost.
pub fn rollout(
    sim: &Simulator,
    initial: &SimState,
    controls: &[ControlInput],
    target: &Target,
    weights: &PlanWeights,
    dt: f64,
) -> Result<(Vec<SimState>, CostBreakdown), SimError> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(initial.clone());
    let mut running = 0.0;
    for u in controls {
        let s = states.last().unwrap();
        running += step_cost(sim, s, u, weights, dt);
        let next = sim.step(s, u)?;
        states.push(next);
    }
    let mut cost = final_cost(sim, states.last().unwrap(), target, weights)?;
    cost.running = running;
    Ok((states, cost))
}

/// Simulator configuration the plan is computed with.
pub fn planning_config(config: &SimConfig, mode: PlanMode, settings: &PlanSettings) -> SimConfig {
    let mut c = config.clone();
    if mode == PlanMode::Steering {
        c.young_modulus /= settings.steering_softening;
    }
    c
}

/// Initial sampling distribution: steady advance that reaches the target
/// depth on the last step, guide at rest, no flips.
pub fn initial_distribution(
    start_tip_x: f64,
    target: &Target,
    mode: PlanMode,
    settings: &PlanSettings,
) -> CeDistribution {
    let steps = settings.horizon + 1;
    let advance = (target.x - start_tip_x) / steps as f64;
    let sp = &settings.spread;
    let guide_sd = match mode {
        PlanMode::Manipulation => sp.guide_sd,
        PlanMode::Steering => 0.0,
    };
    let mut mean = Vec::with_capacity(3 * steps);
    let mut sd = Vec::with_capacity(3 * steps);
    for _ in 0..steps {
        mean.extend([advance, 0.0, sp.flip_mean]);
        sd.extend([sp.advance_sd, guide_sd, sp.flip_sd]);
    }
    CeDistribution::diagonal(&mean, &sd)
}

fn check_target(config: &SimConfig, start: &SimState, target: &Target, settings: &PlanSettings) -> Result<(), ConfigError> {
    if !(target.x > config.skin_x && target.x < config.tissue_end()) {
        return Err(ConfigError::invalid(
            "target",
            format!("depth {} outside the tissue region", target.x - config.skin_x),
        ));
    }
    let budget = (settings.horizon + 1) as f64 * config.limits.max_advance;
    if target.x - start.tip().x > budget {
        return Err(ConfigError::invalid(
            "target",
            format!("needs more than the {budget} mm insertion budget"),
        ));
    }
    Ok(())
}

/// Plans with guide manipulation and bevel flips.
pub fn plan(
    config: &SimConfig,
    target: Target,
    settings: &PlanSettings,
    ce: &CeParams,
) -> Result<NominalTrajectory, PlanError> {
    plan_with_mode(config, target, settings, ce, PlanMode::Manipulation)
}

/// Plans a kinematic-like steering insertion: guide frozen, needle softened.
pub fn plan_steering(
    config: &SimConfig,
    target: Target,
    settings: &PlanSettings,
    ce: &CeParams,
) -> Result<NominalTrajectory, PlanError> {
    plan_with_mode(config, target, settings, ce, PlanMode::Steering)
}

pub fn plan_with_mode(
    config: &SimConfig,
    target: Target,
    settings: &PlanSettings,
    ce: &CeParams,
    mode: PlanMode,
) -> Result<NominalTrajectory, PlanError> {
    settings.validate()?;
    let sim = Simulator::new(planning_config(config, mode, settings))?;
    let start = sim.initial_state();
    check_target(sim.config(), &start, &target, settings)?;
    let init = initial_distribution(start.tip().x, &target, mode, settings);
    let limits = sim.config().limits;
    let w = settings.weights;

    let objective = |z: &[f64]| -> Result<f64, Infallible> {
        let controls = decode(z, &limits);
        Ok(match rollout(&sim, &start, &controls, &target, &w, settings.dt) {
            Ok((_, cost)) => cost.total(),
            Err(_) => INFEASIBLE_COST,
        })
    };
    let result = ce::optimize(objective, &init, ce).map_err(|e| match e {
        CeError::Config(c) => PlanError::Config(c),
        CeError::Objective(never) => match never {},
        CeError::NonFiniteCost(_) => PlanError::NoFeasibleRollout {
            iterations: 0,
            best_cost: f64::NAN,
        },
    })?;
    if result.best_cost >= INFEASIBLE_COST {
        return Err(PlanError::NoFeasibleRollout {
            iterations: result.history.len(),
            best_cost: result.best_cost,
        });
    }
    let controls = decode(&result.best_sample, &limits);
    let (states, cost) = rollout(&sim, &start, &controls, &target, &w, settings.dt)?;
    Ok(NominalTrajectory {
        mode,
        target,
        dt: settings.dt,
        controls,
        states,
        cost,
        iterations: result.history.len(),
        converged: result.converged,
        history: result.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::TissueLayer;

    fn sim() -> Simulator {
        Simulator::new(SimConfig::phantom()).unwrap()
    }

    fn inserted(sim: &Simulator, depth: f64) -> SimState {
        let mut s = sim.initial_state();
        while s.tip().x < sim.config().skin_x + depth - 1e-9 {
            let a = (sim.config().skin_x + depth - s.tip().x).min(1.0);
            s = sim.step(&s, &ControlInput::new(a, 0.0, Flip::Keep)).unwrap();
        }
        s
    }

    #[test]
    fn step_cost_gated_in_air() {
        let sim = sim();
        let s = sim.initial_state();
        let u = ControlInput::new(1.0, 0.7, Flip::Toggle);
        assert_eq!(step_cost(&sim, &s, &u, &PlanWeights::default(), 0.1), 0.0);
    }

    #[test]
    fn straight_needle_in_tissue_costs_nothing() {
        let mut c = SimConfig::phantom();
        c.bevel_offset = 0.0;
        let sim = Simulator::new(c).unwrap();
        let s = inserted(&sim, 5.0);
        assert!(sim.in_tissue(&s));
        let cost = step_cost(&sim, &s, &ControlInput::default(), &PlanWeights::default(), 0.1);
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn guide_term_is_quadratic() {
        let mut c = SimConfig::phantom();
        c.bevel_offset = 0.0;
        let sim = Simulator::new(c).unwrap();
        let s = inserted(&sim, 5.0);
        let w = PlanWeights {
            deflection: 0.0,
            ..Default::default()
        };
        let one = step_cost(&sim, &s, &ControlInput::new(0.0, 0.3, Flip::Keep), &w, 0.1);
        let two = step_cost(&sim, &s, &ControlInput::new(0.0, 0.6, Flip::Keep), &w, 0.1);
        assert!((two - 4.0 * one).abs() < 1e-15);
    }

    #[test]
    fn final_cost_examples() {
        let sim = sim();
        let s = sim.initial_state();
        let tip = s.tip();
        let w = PlanWeights {
            targeting: 1.0,
            ..Default::default()
        };
        let at = final_cost(&sim, &s, &Target::new(tip.x, tip.y), &w).unwrap();
        assert_eq!(at.total(), 0.0);
        let off = final_cost(&sim, &s, &Target::new(tip.x, tip.y + 1.0), &w).unwrap();
        assert!((off.total() - 1.0).abs() < 1e-15);

        let bent = inserted(&sim, 10.0);
        let tip = bent.tip();
        let target = Target::new(tip.x, tip.y + 1.0);
        let plain = final_cost(&sim, &bent, &target, &PlanWeights { strain: 0.0, ..w }).unwrap();
        let with_strain = final_cost(&sim, &bent, &target, &PlanWeights { strain: 1e-3, ..w }).unwrap();
        assert!(with_strain.total() > plain.total());
    }

    #[test]
    fn decode_clamps_and_maps_flip_sign() {
        let lim = ActuatorLimits::default();
        let u = decode(&[3.0, -4.0, 0.0, -1.0, 0.5, 1e-9], &lim);
        assert_eq!(u[0], ControlInput::new(2.0, -1.0, Flip::Keep));
        assert_eq!(u[1], ControlInput::new(0.0, 0.5, Flip::Toggle));
        assert_eq!(decode(&encode(&u), &lim), u);
    }

    #[test]
    fn planning_in_air_has_no_running_cost() {
        let sim = sim();
        let controls = vec![ControlInput::new(0.5, 0.5, Flip::Toggle); 10];
        let (states, cost) = rollout(
            &sim,
            &sim.initial_state(),
            &controls,
            &Target::new(10.0, 0.0),
            &PlanWeights::default(),
            0.1,
        )
        .unwrap();
        assert_eq!(states.len(), 11);
        assert_eq!(cost.running, 0.0);
    }

    #[test]
    fn rejects_unreachable_target() {
        let s = PlanSettings {
            horizon: 5,
            ..Default::default()
        };
        let r = plan(&SimConfig::phantom(), Target::new(40.0, 0.0), &s, &CeParams::default());
        assert!(matches!(r, Err(PlanError::Config(_))));
        let r = plan(&SimConfig::phantom(), Target::new(-5.0, 0.0), &PlanSettings::default(), &CeParams::default());
        assert!(matches!(r, Err(PlanError::Config(_))));
    }

    #[test]
    fn short_plan_replays_exactly() {
        let mut c = SimConfig::phantom();
        c.tip_to_skin = 2.0;
        c.layers = vec![TissueLayer {
            x_min: 0.0,
            x_max: 40.0,
            mu: 1.82e3,
            alpha: 8.74,
            weight: 1.0,
        }];
        let settings = PlanSettings {
            horizon: 9,
            ..Default::default()
        };
        let ce = CeParams {
            sample_count: 16,
            max_iterations: 4,
            ..Default::default()
        };
        let target = Target::new(10.0, 0.5);
        let p = plan(&c, target, &settings, &ce).unwrap();
        assert_eq!(p.states.len(), p.controls.len() + 1);
        let sim = Simulator::new(c).unwrap();
        let (states, cost) =
            rollout(&sim, &sim.initial_state(), &p.controls, &target, &settings.weights, settings.dt).unwrap();
        assert_eq!(states, p.states);
        assert_eq!(cost, p.cost);
        assert!(p.history.iter().all(|h| h.best_cost >= p.cost.total()));
    }
}
