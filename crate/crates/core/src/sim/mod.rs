//! Quasi-static planar simulation of a bevel-tip needle pushed through a
//! lateral guide into layered hyperelastic tissue.
//!
//! The needle is a chain of Hermite beam elements with lateral deflection and
//! rotation degrees of freedom at each node. Nodes sit at fixed arc-length
//! stations behind the base, so insertion advects the needle shape along its
//! own curve before a new equilibrium is solved. Tissue acts through lateral
//! contact stations fixed in the world frame: each station remembers where
//! the needle passed when it was created and pulls it back with an Ogden
//! spring law.

mod banded;
pub mod config;
pub mod ogden;
mod solver;

use serde::{Deserialize, Serialize};

pub use config::{
    second_moment_from_diameter, ActuatorLimits, SimConfig, SolverSettings, TissueLayer,
    PA_TO_N_PER_MM2,
};

use crate::error::{ConfigError, SimError};
use banded::SymBand;

/// Position and heading in the insertion plane (mm, mm, rad).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Which side the bevel faces. `Positive` curves the needle toward +y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bevel {
    Positive,
    Negative,
}

impl Bevel {
    pub fn sign(self) -> f64 {
        match self {
            Bevel::Positive => 1.0,
            Bevel::Negative => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Bevel::Positive => 1,
            Bevel::Negative => -1,
        }
    }

    pub fn toggled(self) -> Self {
        match self {
            Bevel::Positive => Bevel::Negative,
            Bevel::Negative => Bevel::Positive,
        }
    }

    pub fn from_sign(s: f64) -> Self {
        if s < 0.0 {
            Bevel::Negative
        } else {
            Bevel::Positive
        }
    }
}

/// Bevel rotation request: `Toggle` (+1) rotates the needle by 180°.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Flip {
    #[default]
    Keep,
    Toggle,
}

impl Flip {
    /// `+1` for a toggle, `-1` otherwise.
    pub fn as_i8(self) -> i8 {
        match self {
            Flip::Keep => -1,
            Flip::Toggle => 1,
        }
    }

    pub fn from_i8(v: i8) -> Self {
        if v > 0 {
            Flip::Toggle
        } else {
            Flip::Keep
        }
    }

    /// Sign of a continuous surrogate; zero maps to `Keep`.
    pub fn from_surrogate(eps: f64) -> Self {
        if eps > 0.0 {
            Flip::Toggle
        } else {
            Flip::Keep
        }
    }

    pub fn is_toggle(self) -> bool {
        self == Flip::Toggle
    }
}

/// One step of actuation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Base advance along the insertion axis (mm, ≥ 0).
    pub advance: f64,
    /// Lateral guide translation (mm).
    pub guide_shift: f64,
    pub flip: Flip,
}

impl ControlInput {
    pub fn new(advance: f64, guide_shift: f64, flip: Flip) -> Self {
        Self {
            advance,
            guide_shift,
            flip,
        }
    }

    /// Clamps the continuous channels into the actuator limits.
    pub fn clamped(self, limits: &ActuatorLimits) -> Self {
        Self {
            advance: self.advance.clamp(0.0, limits.max_advance),
            guide_shift: self
                .guide_shift
                .clamp(-limits.max_guide_step, limits.max_guide_step),
            flip: self.flip,
        }
    }
}

/// Nodal poses of the needle, base first, plus the bevel direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleState {
    pub nodes: Vec<Pose2>,
    pub bevel: Bevel,
}

impl NeedleState {
    pub fn tip(&self) -> Pose2 {
        *self.nodes.last().expect("needle has at least two nodes")
    }
}

/// A tissue station the needle passes through.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    /// Fixed world abscissa (mm).
    pub station_x: f64,
    /// Lateral rest position recorded when the station was created (mm).
    pub anchor_y: f64,
    pub layer_id: usize,
    pub weight: f64,
}

/// Complete simulator state. Cheap to clone; stepping returns a new value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub needle: NeedleState,
    pub contacts: Vec<ContactPoint>,
    /// World abscissa of the clamped needle base.
    pub base_x: f64,
    /// Lateral clamp position of the base.
    pub base_y: f64,
    /// Clamp rotation of the base.
    pub base_theta: f64,
    /// Absolute lateral position of the guide.
    pub guide_y: f64,
    pub step_index: usize,
    /// Lateral bevel load at the tip (N). Re-evaluated on every advancing
    /// step and held while the needle is stationary.
    pub bevel_load: f64,
    /// Additional lateral tip load (N). Zero in plain simulation; set by
    /// feedback projection and test fixtures.
    pub tip_load: f64,
}

impl SimState {
    pub fn tip(&self) -> Pose2 {
        self.needle.tip()
    }

    pub fn bevel(&self) -> Bevel {
        self.needle.bevel
    }
}

/// Tip pose of a state; equal to the last node.
pub fn tip_pose(state: &SimState) -> Pose2 {
    state.needle.tip()
}

/// Restoring lateral force per unit needle length (N/mm) exerted by a contact
/// whose needle point sits `deflection` mm away from its anchor.
///
/// The force is `-∂(t² 𝒲_c)/∂d` with `𝒲_c` the weighted Ogden density of the
/// station's layer, so it is odd in `d` and opposes the deflection.
pub fn contact_force(
    cp: &ContactPoint,
    deflection: f64,
    layers: &[TissueLayer],
    t_char: f64,
) -> Result<f64, SimError> {
    if deflection.abs() >= t_char {
        return Err(SimError::Domain {
            deflection,
            t_char,
        });
    }
    if deflection == 0.0 {
        return Ok(0.0);
    }
    let layer = &layers[cp.layer_id];
    let lambda = ogden::stretch_from_deflection(deflection, t_char);
    let slope = ogden::energy_density_slope(layer.mu * PA_TO_N_PER_MM2, layer.alpha, lambda);
    Ok(deflection.signum() * t_char * cp.weight * slope)
}

/// Hermite cubic shape functions and their x-derivatives on an element of
/// length `l` at local coordinate `xi ∈ [0, 1]`.
#[inline]
pub(crate) fn hermite(xi: f64, l: f64) -> ([f64; 4], [f64; 4]) {
    let xi2 = xi * xi;
    let xi3 = xi2 * xi;
    let n = [
        1.0 - 3.0 * xi2 + 2.0 * xi3,
        l * (xi - 2.0 * xi2 + xi3),
        3.0 * xi2 - 2.0 * xi3,
        l * (-xi2 + xi3),
    ];
    let dn = [
        (-6.0 * xi + 6.0 * xi2) / l,
        1.0 - 4.0 * xi + 3.0 * xi2,
        (6.0 * xi - 6.0 * xi2) / l,
        -2.0 * xi + 3.0 * xi2,
    ];
    (n, dn)
}

/// The simulator: validated configuration plus the assembled beam stiffness.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
    beam: SymBand,
}

const STATION_EPS: f64 = 1e-9;

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let beam = solver::assemble_beam(&config);
        Ok(Self { config, beam })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Straight needle on the insertion axis with the tip `tip_to_skin`
    /// before the skin plane, bevel facing +y, no contacts.
    pub fn initial_state(&self) -> SimState {
        let c = &self.config;
        let tip_x = c.skin_x - c.tip_to_skin;
        let base_x = tip_x - c.needle_length();
        let nodes = (0..c.n_nodes)
            .map(|i| Pose2 {
                x: base_x + i as f64 * c.element_length,
                y: 0.0,
                theta: 0.0,
            })
            .collect();
        SimState {
            needle: NeedleState {
                nodes,
                bevel: Bevel::Positive,
            },
            contacts: Vec::new(),
            base_x,
            base_y: 0.0,
            base_theta: 0.0,
            guide_y: 0.0,
            step_index: 0,
            bevel_load: 0.0,
            tip_load: 0.0,
        }
    }

    /// Rigidly moves the needle, its clamp and the guide by a lateral offset
    /// and a rotation about the base, then re-solves.
    pub fn with_rigid_offset(
        &self,
        state: &SimState,
        lateral: f64,
        angle: f64,
    ) -> Result<SimState, SimError> {
        let mut s = state.clone();
        s.base_y += lateral;
        s.base_theta += angle;
        for node in &mut s.needle.nodes {
            node.y += lateral + angle * (node.x - s.base_x);
            node.theta += angle;
        }
        s.guide_y += lateral + angle * (self.config.guide_x - s.base_x);
        self.solve_equilibrium(&s)
    }

    pub fn guide_active(&self, state: &SimState) -> bool {
        let g = self.config.guide_x;
        state.base_x < g && g <= state.tip().x
    }

    pub fn in_tissue(&self, state: &SimState) -> bool {
        state.tip().x > self.config.skin_x
    }

    /// Lateral position and slope of the needle centreline at world abscissa
    /// `x`, extrapolated along the end tangents outside the needle.
    pub fn centerline_at(&self, state: &SimState, x: f64) -> (f64, f64) {
        let nodes = &state.needle.nodes;
        let l = self.config.element_length;
        let first = nodes[0];
        let last = *nodes.last().unwrap();
        if x <= first.x {
            return (first.y + first.theta * (x - first.x), first.theta);
        }
        if x >= last.x {
            return (last.y + last.theta * (x - last.x), last.theta);
        }
        let (e, xi) = self.locate(state, x);
        let (a, b) = (nodes[e], nodes[e + 1]);
        let (n, dn) = hermite(xi, l);
        let y = n[0] * a.y + n[1] * a.theta + n[2] * b.y + n[3] * b.theta;
        let s = dn[0] * a.y + dn[1] * a.theta + dn[2] * b.y + dn[3] * b.theta;
        (y, s)
    }

    /// Element index and local coordinate of world abscissa `x`.
    pub(crate) fn locate(&self, state: &SimState, x: f64) -> (usize, f64) {
        let l = self.config.element_length;
        let n_el = self.config.n_nodes - 1;
        let r = (x - state.base_x) / l;
        let e = (r.floor().max(0.0) as usize).min(n_el - 1);
        let xi = (r - e as f64).clamp(0.0, 1.0);
        (e, xi)
    }

    /// Advects the needle shape along its own centreline by `dx` (mm).
    /// Positive `dx` pushes the needle forward; the tip extends along its
    /// tangent.
    pub fn slide(&self, state: &SimState, dx: f64) -> SimState {
        let mut s = state.clone();
        if dx == 0.0 {
            return s;
        }
        s.base_x = state.base_x + dx;
        let l = self.config.element_length;
        for (i, node) in s.needle.nodes.iter_mut().enumerate() {
            let x = s.base_x + i as f64 * l;
            let (y, slope) = self.centerline_at(state, x);
            *node = Pose2 { x, y, theta: slope };
        }
        s
    }

    /// Brings the contact list in line with the current tip position:
    /// stations beyond the tip are removed, and stations the tip has passed
    /// are created, anchored at the current centreline.
    pub fn update_contacts(&self, state: &SimState) -> SimState {
        let c = &self.config;
        let mut s = state.clone();
        let tip_x = s.tip().x;
        s.contacts.retain(|cp| cp.station_x <= tip_x + STATION_EPS);
        let h = c.contact_spacing;
        let mut k = s
            .contacts
            .last()
            .map_or(1, |cp| ((cp.station_x - c.skin_x) / h).round() as usize + 1);
        let end = c.tissue_end();
        loop {
            let x = c.skin_x + k as f64 * h;
            if x > tip_x + STATION_EPS || x >= end {
                break;
            }
            if let Some(layer_id) = c.layer_at(x) {
                let (anchor_y, _) = self.centerline_at(state, x);
                s.contacts.push(ContactPoint {
                    station_x: x,
                    anchor_y,
                    layer_id,
                    weight: c.layers[layer_id].weight,
                });
            }
            k += 1;
        }
        s
    }

    /// Needle-minus-anchor lateral offset at every contact.
    pub fn deflections(&self, state: &SimState) -> Vec<f64> {
        state
            .contacts
            .iter()
            .map(|cp| self.centerline_at(state, cp.station_x).0 - cp.anchor_y)
            .collect()
    }

    /// Weighted Ogden energy density summed over all contacts (Pa).
    pub fn strain_energy(&self, state: &SimState) -> Result<f64, SimError> {
        let t = self.config.t_char;
        let mut total = 0.0;
        for (cp, d) in state.contacts.iter().zip(self.deflections(state)) {
            if d.abs() >= t {
                return Err(SimError::Domain {
                    deflection: d,
                    t_char: t,
                });
            }
            let layer = &self.config.layers[cp.layer_id];
            let lambda = ogden::stretch_from_deflection(d, t);
            total += cp.weight * ogden::energy_density(layer.mu, layer.alpha, lambda);
        }
        Ok(total)
    }

    /// Lateral bevel force at the tip (N) for a step advancing by `advance`.
    pub fn bevel_tip_force(&self, state: &SimState, advance: f64) -> f64 {
        let c = &self.config;
        if c.bevel_offset == 0.0 || advance <= 0.0 || !self.in_tissue(state) {
            return 0.0;
        }
        match c.layer_at(state.tip().x) {
            Some(l) => {
                state.bevel().sign()
                    * c.bevel_gain
                    * c.layers[l].mu
                    * PA_TO_N_PER_MM2
                    * c.bevel_offset
            }
            None => 0.0,
        }
    }

    /// Applies one control input and returns the new equilibrium.
    pub fn step(&self, state: &SimState, input: &ControlInput) -> Result<SimState, SimError> {
        let lim = &self.config.limits;
        let slack = 1e-12;
        if !(input.advance.is_finite() && input.advance >= 0.0 && input.advance <= lim.max_advance + slack)
        {
            return Err(SimError::InputOutOfRange(format!(
                "advance {} outside [0, {}]",
                input.advance, lim.max_advance
            )));
        }
        if !(input.guide_shift.is_finite() && input.guide_shift.abs() <= lim.max_guide_step + slack) {
            return Err(SimError::InputOutOfRange(format!(
                "guide shift {} outside ±{}",
                input.guide_shift, lim.max_guide_step
            )));
        }
        let mut s = self.slide(state, input.advance);
        s.guide_y += input.guide_shift;
        if input.flip.is_toggle() {
            s.needle.bevel = s.needle.bevel.toggled();
        }
        s.step_index += 1;
        let mut s = self.update_contacts(&s);
        if input.advance > 0.0 {
            s.bevel_load = self.bevel_tip_force(&s, input.advance);
        }
        self.solve_equilibrium(&s)
    }

    /// Solves for the configuration balancing beam, contact, bevel and tip
    /// loads under the base clamp and guide constraint.
    pub fn solve_equilibrium(&self, state: &SimState) -> Result<SimState, SimError> {
        solver::solve(self, state, None).map(|r| r.state)
    }

    /// Solves with the tip's lateral position prescribed. Returns the
    /// constrained equilibrium and the lateral force the constraint exerts
    /// on the needle (N).
    pub fn solve_with_tip_at(&self, state: &SimState, tip_y: f64) -> Result<(SimState, f64), SimError> {
        solver::solve(self, state, Some(tip_y)).map(|r| (r.state, r.tip_reaction))
    }

    /// Norm of the out-of-balance nodal force at the state's configuration.
    pub fn residual_norm(&self, state: &SimState) -> f64 {
        solver::residual_norm(self, state)
    }
}
