use needle_core::bang_bang::KinematicParams;
use needle_core::scenario::Scenario;
use needle_core::sim::{ControlInput, Flip, Simulator};

/// Tip heading rate (rad/mm) of a straight insertion through the
/// superficial layer, away from the skin and the layer boundary.
fn superficial_heading_rate() -> f64 {
    let scenario = Scenario::phantom();
    let sim = Simulator::new(scenario.sim.clone()).unwrap();
    let boundary = scenario.sim.layers[0].x_max;
    let (start, end) = (2.0, boundary - 2.0);
    let mut s = sim.initial_state();
    let mut first = None;
    let mut last = None;
    while s.tip().x < end {
        s = sim.step(&s, &ControlInput::new(0.5, 0.0, Flip::Keep)).unwrap();
        let tip = s.tip();
        if tip.x >= start {
            first.get_or_insert((tip.x, tip.theta));
            if tip.x <= end {
                last = Some((tip.x, tip.theta));
            }
        }
    }
    let ((x0, t0), (x1, t1)) = (first.unwrap(), last.unwrap());
    (t1 - t0) / (x1 - x0)
}

#[test]
fn default_curvature_matches_simulated_heading_rate() {
    let rate = superficial_heading_rate();
    let kappa = KinematicParams::default().curvature;
    assert!(rate > 0.0);
    assert!((kappa - rate).abs() <= 0.15 * rate, "kappa {kappa}, heading rate {rate}");
    assert_eq!(Scenario::phantom().kinematics.curvature, kappa);
}
