//! Bevel direction control from constant-curvature tip rollouts.
//!
//! The tip is propagated with a unicycle model whose turning rate is fixed
//! by the bevel side. Both sides are rolled out to the target depth and the
//! bevel is flipped when the other side ends closer to the target by more
//! than a hysteresis margin.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::planner::Target;
use crate::sim::{Bevel, Flip, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KinematicParams {
    /// Path curvature produced by the bevel (1/mm). The default is the tip
    /// heading rate of the phantom simulator in the superficial layer.
    pub curvature: f64,
    /// Arc length of one unicycle update (mm).
    pub substep: f64,
    /// Minimum distance gain that justifies a flip (mm).
    pub hysteresis: f64,
}

impl Default for KinematicParams {
    fn default() -> Self {
        Self {
            curvature: 0.0007,
            substep: 0.5,
            hysteresis: 0.05,
        }
    }
}

impl KinematicParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.curvature > 0.0) {
            return Err(ConfigError::invalid("kinematics.curvature", "must be positive"));
        }
        if !(self.substep > 0.0) {
            return Err(ConfigError::invalid("kinematics.substep", "must be positive"));
        }
        if !(self.hysteresis >= 0.0) {
            return Err(ConfigError::invalid("kinematics.hysteresis", "must be non-negative"));
        }
        Ok(())
    }
}

/// Advances `tip` by `total_advance` mm along a circular arc turning toward
/// `side`, in sub-steps of `params.substep` with a final partial step.
pub fn rollout_kinematic(tip: Pose2, side: Bevel, params: &KinematicParams, total_advance: f64) -> Pose2 {
    let mut p = tip;
    let full = (total_advance / params.substep).floor().max(0.0) as usize;
    let rest = (total_advance - full as f64 * params.substep).max(0.0);
    let k = side.sign() * params.curvature;
    let mut advance = |u: f64| {
        p = Pose2 {
            x: p.x + p.theta.cos() * u,
            y: p.y + p.theta.sin() * u,
            theta: p.theta + k * u,
        };
    };
    for _ in 0..full {
        advance(params.substep);
    }
    if rest > 0.0 {
        advance(rest);
    }
    p
}

/// Decides whether to flip the bevel so the tip heads for `target`.
pub fn decide_flip(tip: Pose2, bevel: Bevel, target: &Target, params: &KinematicParams, lookahead: f64) -> Flip {
    let stay = rollout_kinematic(tip, bevel, params, lookahead);
    let swap = rollout_kinematic(tip, bevel.toggled(), params, lookahead);
    let d_stay = target.distance_to(stay.x, stay.y);
    let d_swap = target.distance_to(swap.x, swap.y);
    if d_stay - d_swap > params.hysteresis {
        Flip::Toggle
    } else {
        Flip::Keep
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn origin() -> Pose2 {
        Pose2::default()
    }

    fn unit(curvature: f64) -> KinematicParams {
        KinematicParams {
            curvature,
            substep: 1.0,
            hysteresis: 0.05,
        }
    }

    #[test]
    fn single_step_uses_initial_heading() {
        let p = rollout_kinematic(origin(), Bevel::Positive, &unit(0.01), 1.0);
        assert_eq!((p.x, p.y), (1.0, 0.0));
        assert!((p.theta - 0.01).abs() < 1e-15);
    }

    #[test]
    fn two_steps() {
        let p = rollout_kinematic(origin(), Bevel::Positive, &unit(0.01), 2.0);
        assert!((p.x - (1.0 + 0.01f64.cos())).abs() < 1e-15);
        assert!((p.x - 1.99995).abs() < 1e-6);
        assert!((p.y - 0.01f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn partial_final_step() {
        let p = rollout_kinematic(origin(), Bevel::Positive, &unit(0.01), 1.5);
        assert!((p.x - (1.0 + 0.5 * 0.01f64.cos())).abs() < 1e-15);
        assert!((p.theta - 0.015).abs() < 1e-15);
    }

    #[test]
    fn truth_table() {
        let params = KinematicParams::default();
        let tip = origin();
        assert_eq!(decide_flip(tip, Bevel::Positive, &Target::new(40.0, 5.0), &params, 40.0), Flip::Keep);
        assert_eq!(decide_flip(tip, Bevel::Positive, &Target::new(40.0, -5.0), &params, 40.0), Flip::Toggle);
        assert_eq!(decide_flip(tip, Bevel::Positive, &Target::new(40.0, 0.0), &params, 40.0), Flip::Keep);
    }

    #[test]
    fn vanishing_curvature_keeps_bevel() {
        let params = KinematicParams {
            curvature: 1e-12,
            ..Default::default()
        };
        let f = decide_flip(Pose2 { x: 0.0, y: 1.0, theta: 0.02 }, Bevel::Positive, &Target::new(30.0, -4.0), &params, 30.0);
        assert_eq!(f, Flip::Keep);
    }

    proptest! {
        #[test]
        fn mirrored_side_mirrors_path(len in 0.0..60.0f64, k in 1e-4..0.05f64) {
            let params = KinematicParams { curvature: k, ..Default::default() };
            let start = origin();
            let a = rollout_kinematic(start, Bevel::Positive, &params, len);
            let b = rollout_kinematic(start, Bevel::Negative, &params, len);
            prop_assert_eq!(a.x, b.x);
            prop_assert_eq!(a.y, -b.y);
        }

        #[test]
        fn mirror_equivariance(
            y in -3.0..3.0f64, theta in -0.1..0.1f64, ty in -8.0..8.0f64, h in 0.0..0.3f64,
            positive in any::<bool>(),
        ) {
            let params = KinematicParams { hysteresis: h, ..Default::default() };
            let bevel = if positive { Bevel::Positive } else { Bevel::Negative };
            let tip = Pose2 { x: 0.0, y, theta };
            let mirrored = Pose2 { x: 0.0, y: -y, theta: -theta };
            let a = decide_flip(tip, bevel, &Target::new(35.0, ty), &params, 35.0);
            let b = decide_flip(mirrored, bevel.toggled(), &Target::new(35.0, -ty), &params, 35.0);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn larger_hysteresis_never_adds_flips(
            y in -3.0..3.0f64, theta in -0.1..0.1f64, ty in -8.0..8.0f64,
            h in 0.0..0.5f64, extra in 0.0..0.5f64,
        ) {
            let tip = Pose2 { x: 0.0, y, theta };
            let lo = KinematicParams { hysteresis: h, ..Default::default() };
            let hi = KinematicParams { hysteresis: h + extra, ..Default::default() };
            let t = Target::new(30.0, ty);
            if decide_flip(tip, Bevel::Positive, &t, &hi, 30.0).is_toggle() {
                prop_assert!(decide_flip(tip, Bevel::Positive, &t, &lo, 30.0).is_toggle());
            }
        }
    }
}
