//! Simulator configuration: needle geometry, tissue layers and solver settings.
//!
//! All quantities are stored in the simulator's base units: millimetres for
//! lengths, pascals for moduli. The solver converts moduli to N/mm² internally.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Conversion factor from Pa to N/mm².
pub const PA_TO_N_PER_MM2: f64 = 1e-6;

/// One band of tissue along the insertion axis, modelled with a one-term
/// Ogden strain energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueLayer {
    /// Start of the band along the insertion axis (mm, world frame).
    pub x_min: f64,
    /// End of the band (mm, world frame).
    pub x_max: f64,
    /// Ogden shear modulus (Pa).
    pub mu: f64,
    /// Ogden exponent.
    pub alpha: f64,
    /// Per-layer weight applied to strain energy and contact forces.
    pub weight: f64,
}

impl TissueLayer {
    /// Half-open membership test `[x_min, x_max)`.
    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x < self.x_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Equilibrium residual tolerance (N).
    pub tolerance: f64,
    pub max_newton_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_newton_iters: 50,
        }
    }
}

/// Per-step actuator bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorLimits {
    /// Upper bound on base advance per step (mm). Lower bound is 0.
    pub max_advance: f64,
    /// Bound on |guide translation| per step (mm).
    pub max_guide_step: f64,
}

impl Default for ActuatorLimits {
    fn default() -> Self {
        Self {
            max_advance: 2.0,
            max_guide_step: 1.0,
        }
    }
}

/// Full description of a needle/tissue simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_nodes: usize,
    /// Rest length of each beam element (mm).
    pub element_length: f64,
    /// Needle Young's modulus (Pa).
    pub young_modulus: f64,
    /// Second moment of area of the needle cross-section (mm⁴).
    pub second_moment: f64,
    /// World abscissa of the skin entry plane (mm).
    pub skin_x: f64,
    /// World abscissa of the needle guide (mm), `guide_x < skin_x`.
    pub guide_x: f64,
    /// Initial distance from the needle tip to the skin plane (mm).
    pub tip_to_skin: f64,
    /// Bevel spring offset `b` (mm). Zero gives a symmetric tip.
    pub bevel_offset: f64,
    /// Bevel spring gain (mm). Tip force is `bvl * gain * mu * b`.
    pub bevel_gain: f64,
    /// Spacing between contact stations (mm).
    pub contact_spacing: f64,
    /// Characteristic tissue thickness mapping deflection to stretch (mm).
    pub t_char: f64,
    pub layers: Vec<TissueLayer>,
    pub solver: SolverSettings,
    pub limits: ActuatorLimits,
}

/// Second moment of area of a solid circular section of diameter `d` (mm⁴).
pub fn second_moment_from_diameter(d: f64) -> f64 {
    std::f64::consts::PI * d.powi(4) / 64.0
}

impl SimConfig {
    /// Two-layer phantom: 21 G stainless needle, guide 41 mm from the skin,
    /// tip 28.5 mm from the skin, superficial layer 1.82 kPa over a deep
    /// layer 3.63 kPa, both with exponent 8.74.
    pub fn phantom() -> Self {
        let skin_x = 0.0;
        Self {
            n_nodes: 41,
            element_length: 3.0,
            young_modulus: 200e9,
            second_moment: second_moment_from_diameter(0.819),
            skin_x,
            guide_x: skin_x - 41.0,
            tip_to_skin: 28.5,
            bevel_offset: 0.5,
            bevel_gain: DEFAULT_BEVEL_GAIN,
            contact_spacing: 1.0,
            t_char: 10.0,
            layers: vec![
                TissueLayer {
                    x_min: skin_x,
                    x_max: skin_x + 20.0,
                    mu: 1.82e3,
                    alpha: 8.74,
                    weight: 1.0,
                },
                TissueLayer {
                    x_min: skin_x + 20.0,
                    x_max: skin_x + 80.0,
                    mu: 3.63e3,
                    alpha: 8.74,
                    weight: 1.0,
                },
            ],
            solver: SolverSettings::default(),
            limits: ActuatorLimits::default(),
        }
    }

    pub fn needle_length(&self) -> f64 {
        self.element_length * (self.n_nodes.saturating_sub(1)) as f64
    }

    /// Bending stiffness EI in N·mm².
    pub fn bending_stiffness(&self) -> f64 {
        self.young_modulus * PA_TO_N_PER_MM2 * self.second_moment
    }

    /// Far end of the tissue region.
    pub fn tissue_end(&self) -> f64 {
        self.layers.last().map_or(self.skin_x, |l| l.x_max)
    }

    /// Index of the layer containing world abscissa `x`.
    pub fn layer_at(&self, x: f64) -> Option<usize> {
        self.layers.iter().position(|l| l.contains(x))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("element_length", self.element_length),
            ("young_modulus", self.young_modulus),
            ("second_moment", self.second_moment),
            ("contact_spacing", self.contact_spacing),
            ("t_char", self.t_char),
            ("tip_to_skin", self.tip_to_skin),
            ("solver.tolerance", self.solver.tolerance),
            ("limits.max_advance", self.limits.max_advance),
            ("limits.max_guide_step", self.limits.max_guide_step),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if self.n_nodes < 2 {
            return Err(ConfigError::invalid("n_nodes", "at least 2 nodes required"));
        }
        if self.solver.max_newton_iters == 0 {
            return Err(ConfigError::invalid("solver.max_newton_iters", "must be at least 1"));
        }
        if self.bevel_offset < 0.0 || !self.bevel_offset.is_finite() {
            return Err(ConfigError::invalid("bevel_offset", "must be non-negative"));
        }
        if self.bevel_gain < 0.0 || !self.bevel_gain.is_finite() {
            return Err(ConfigError::invalid("bevel_gain", "must be non-negative"));
        }
        if !(self.guide_x < self.skin_x) {
            return Err(ConfigError::invalid(
                "guide_x",
                "guide must lie outside the tissue, before the skin plane",
            ));
        }
        if self.layers.is_empty() {
            return Err(ConfigError::invalid("layers", "at least one tissue layer required"));
        }
        let mut prev_end = self.skin_x;
        for (i, layer) in self.layers.iter().enumerate() {
            let key = format!("layers[{i}]");
            if !(layer.x_max > layer.x_min) {
                return Err(ConfigError::invalid(&key, "empty or inverted band"));
            }
            if layer.x_min < prev_end - 1e-12 {
                return Err(ConfigError::invalid(&key, "layers overlap or are out of order"));
            }
            if !(layer.mu > 0.0) {
                return Err(ConfigError::invalid(&key, "mu must be positive"));
            }
            if layer.alpha == 0.0 || !layer.alpha.is_finite() {
                return Err(ConfigError::invalid(&key, "alpha must be non-zero"));
            }
            if layer.weight < 0.0 {
                return Err(ConfigError::invalid(&key, "weight must be non-negative"));
            }
            prev_end = layer.x_max;
        }
        Ok(())
    }
}

/// Bevel gain giving roughly 3 mm of tip deviation over a 40 mm insertion
/// into the superficial phantom layer.
pub const DEFAULT_BEVEL_GAIN: f64 = 78.0;
