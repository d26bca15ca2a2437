//! Shared fixtures for the criterion benchmarks under `benches/`.

use needle_core::planner::{rollout, NominalTrajectory, PlanMode, PlanWeights, Target};
use needle_core::scenario::Scenario;
use needle_core::{ControlInput, Flip, SimState, Simulator};

/// Model simulator of the bundled phantom scenario.
pub fn phantom() -> Simulator {
    Simulator::new(Scenario::phantom().sim).expect("bundled scenario is valid")
}

/// State after a straight insertion that puts the tip `depth` mm past the skin.
pub fn inserted(sim: &Simulator, depth: f64) -> SimState {
    let mut s = sim.initial_state();
    let skin = sim.config().skin_x;
    while s.tip().x < skin + depth {
        s = sim.step(&s, &ControlInput::new(1.0, 0.0, Flip::Keep)).expect("straight insertion solves");
    }
    s
}

/// Straight nominal of `steps` unit advances toward a target on the axis.
pub fn straight_nominal(sim: &Simulator, steps: usize) -> NominalTrajectory {
    let controls = vec![ControlInput::new(1.0, 0.0, Flip::Keep); steps];
    let start = sim.initial_state();
    let target = Target::new(start.tip().x + steps as f64, 0.0);
    let dt = 0.1;
    let (states, cost) = rollout(sim, &start, &controls, &target, &PlanWeights::default(), dt).expect("rollout solves");
    NominalTrajectory {
        mode: PlanMode::Manipulation,
        target,
        dt,
        controls,
        states,
        cost,
        iterations: 0,
        converged: true,
        history: Vec::new(),
    }
}
