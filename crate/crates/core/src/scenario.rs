//! Scenario files: simulator parameters, targets, plant perturbations and
//! controller settings in one TOML document.
//!
//! Required sections are `[needle]`, `[tissue]`, `[geometry]` and
//! `[solver]`. Everything else falls back to defaults. Units follow the
//! key suffixes (`_mm`, `_kpa`, `_gpa`); the resulting [`SimConfig`] is in
//! millimetres and pascals.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bang_bang::KinematicParams;
use crate::ce::CeParams;
use crate::em::SensorModel;
use crate::error::{ConfigError, ScenarioError};
use crate::planner::{PlanMode, PlanSettings, Target};
use crate::sim::config::{second_moment_from_diameter, ActuatorLimits, SolverSettings};
use crate::sim::{SimConfig, TissueLayer};
use crate::tracker::TrackSettings;

/// Scenario bundled with the toolkit: the two-layer phantom and the
/// fifteen-target campaign.
pub const PHANTOM_TOML: &str = include_str!("../scenarios/phantom.toml");

const REQUIRED_SECTIONS: [&str; 4] = ["needle", "tissue", "geometry", "solver"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeedleSection {
    pub n_nodes: usize,
    pub element_length_mm: f64,
    pub young_modulus_gpa: f64,
    pub outer_diameter_mm: f64,
    pub bevel_offset_mm: f64,
    #[serde(default = "default_bevel_gain")]
    pub bevel_gain: f64,
}

fn default_bevel_gain() -> f64 {
    crate::sim::config::DEFAULT_BEVEL_GAIN
}

/// One tissue band; `depth_mm` is its thickness, bands stack from the skin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSection {
    pub depth_mm: f64,
    pub mu_kpa: f64,
    pub alpha: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TissueSection {
    pub layers: Vec<LayerSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub guide_to_skin_mm: f64,
    pub tip_to_skin_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub tolerance: f64,
    pub max_newton_iters: usize,
    pub contact_spacing_mm: f64,
    pub t_char_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSection {
    pub max_advance_mm: f64,
    pub max_guide_step_mm: f64,
}

impl Default for LimitsSection {
    fn default() -> Self {
        let l = ActuatorLimits::default();
        Self {
            max_advance_mm: l.max_advance,
            max_guide_step_mm: l.max_guide_step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    pub mode: PlanMode,
    #[serde(flatten)]
    pub settings: PlanSettings,
    pub ce: CeParams,
}

impl Default for PlannerSection {
    fn default() -> Self {
        Self {
            mode: PlanMode::Manipulation,
            settings: PlanSettings::default(),
            ce: CeParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSection {
    #[serde(flatten)]
    pub settings: TrackSettings,
    pub ce: CeParams,
}

/// Tracker CE budget: small populations, a few iterations per control step.
pub fn default_track_ce() -> CeParams {
    CeParams {
        sample_count: 32,
        max_iterations: 5,
        smoothing: 1.0,
        ..CeParams::default()
    }
}

impl Default for TrackerSection {
    fn default() -> Self {
        Self {
            settings: TrackSettings::default(),
            ce: default_track_ce(),
        }
    }
}

/// Differences between the plant (truth) and the controller's model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perturbation {
    /// Rigid lateral shift of the plant needle and guide (mm).
    pub lateral_offset_mm: f64,
    /// Rigid rotation of the plant needle about its base (rad).
    pub angular_offset_rad: f64,
    /// Multiplier on every plant tissue μ.
    pub mu_scale: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            lateral_offset_mm: 0.5,
            angular_offset_rad: 0.0,
            mu_scale: 1.1,
        }
    }
}

impl Perturbation {
    pub fn none() -> Self {
        Self {
            lateral_offset_mm: 0.0,
            angular_offset_rad: 0.0,
            mu_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.mu_scale > 0.0 && self.mu_scale.is_finite()) {
            return Err(ConfigError::invalid("perturbation.mu_scale", "must be positive"));
        }
        if !self.lateral_offset_mm.is_finite() || !self.angular_offset_rad.is_finite() {
            return Err(ConfigError::invalid("perturbation", "offsets must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    /// Target depths below the skin (mm).
    pub depths_mm: Vec<f64>,
    /// Lateral target offsets (mm).
    pub offsets_mm: Vec<f64>,
    /// Explicit `[depth, offset]` pairs; replaces the depth × offset grid.
    pub targets: Option<Vec<[f64; 2]>>,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for CampaignSection {
    fn default() -> Self {
        Self {
            depths_mm: vec![25.0, 30.0, 35.0, 40.0, 45.0],
            offsets_mm: vec![-5.0, 0.0, 5.0],
            targets: None,
            repetitions: 10,
            seed: 0,
        }
    }
}

/// Serialized form of a scenario, section by section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub needle: NeedleSection,
    pub tissue: TissueSection,
    pub geometry: GeometrySection,
    pub solver: SolverSection,
    #[serde(default)]
    pub limits: LimitsSection,
    #[serde(default)]
    pub planner: PlannerSection,
    #[serde(default)]
    pub tracker: TrackerSection,
    #[serde(default)]
    pub kinematics: KinematicParams,
    #[serde(default)]
    pub sensor: SensorModel,
    #[serde(default)]
    pub perturbation: Perturbation,
    #[serde(default)]
    pub campaign: CampaignSection,
}

/// A validated scenario ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub sim: SimConfig,
    /// Targets in world coordinates.
    pub targets: Vec<Target>,
    pub perturbation: Perturbation,
    pub sensor: SensorModel,
    pub mode: PlanMode,
    pub plan: PlanSettings,
    pub plan_ce: CeParams,
    pub track: TrackSettings,
    pub track_ce: CeParams,
    pub kinematics: KinematicParams,
    pub repetitions: usize,
    pub seed: u64,
    /// Source document, kept for snapshots.
    pub file: ScenarioFile,
}

fn prefixed(prefix: &str, e: ConfigError) -> ConfigError {
    ConfigError::invalid(format!("{prefix}.{}", e.key), e.message)
}

impl ScenarioFile {
    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        let n = &self.needle;
        let g = &self.geometry;
        let s = &self.solver;
        let checks = [
            ("needle.element_length_mm", n.element_length_mm),
            ("needle.young_modulus_gpa", n.young_modulus_gpa),
            ("needle.outer_diameter_mm", n.outer_diameter_mm),
            ("geometry.guide_to_skin_mm", g.guide_to_skin_mm),
            ("geometry.tip_to_skin_mm", g.tip_to_skin_mm),
            ("solver.tolerance", s.tolerance),
            ("solver.contact_spacing_mm", s.contact_spacing_mm),
            ("solver.t_char_mm", s.t_char_mm),
            ("limits.max_advance_mm", self.limits.max_advance_mm),
            ("limits.max_guide_step_mm", self.limits.max_guide_step_mm),
        ];
        for (key, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(key, format!("must be positive, got {v}")));
            }
        }
        if n.n_nodes < 2 {
            return Err(ConfigError::invalid("needle.n_nodes", "at least 2 nodes required"));
        }
        if self.tissue.layers.is_empty() {
            return Err(ConfigError::invalid("tissue.layers", "at least one layer required"));
        }
        let skin_x = 0.0;
        let mut x = skin_x;
        let mut layers = Vec::with_capacity(self.tissue.layers.len());
        for (i, l) in self.tissue.layers.iter().enumerate() {
            let key = |field: &str| format!("tissue.layers[{i}].{field}");
            if !(l.depth_mm > 0.0) {
                return Err(ConfigError::invalid(key("depth_mm"), "must be positive"));
            }
            if !(l.mu_kpa > 0.0) {
                return Err(ConfigError::invalid(key("mu_kpa"), "must be positive"));
            }
            if l.alpha == 0.0 || !l.alpha.is_finite() {
                return Err(ConfigError::invalid(key("alpha"), "must be non-zero"));
            }
            if !(l.weight >= 0.0) {
                return Err(ConfigError::invalid(key("weight"), "must be non-negative"));
            }
            layers.push(TissueLayer {
                x_min: x,
                x_max: x + l.depth_mm,
                mu: l.mu_kpa * 1e3,
                alpha: l.alpha,
                weight: l.weight,
            });
            x += l.depth_mm;
        }
        let config = SimConfig {
            n_nodes: n.n_nodes,
            element_length: n.element_length_mm,
            young_modulus: n.young_modulus_gpa * 1e9,
            second_moment: second_moment_from_diameter(n.outer_diameter_mm),
            skin_x,
            guide_x: skin_x - g.guide_to_skin_mm,
            tip_to_skin: g.tip_to_skin_mm,
            bevel_offset: n.bevel_offset_mm,
            bevel_gain: n.bevel_gain,
            contact_spacing: s.contact_spacing_mm,
            t_char: s.t_char_mm,
            layers,
            solver: SolverSettings {
                tolerance: s.tolerance,
                max_newton_iters: s.max_newton_iters,
            },
            limits: ActuatorLimits {
                max_advance: self.limits.max_advance_mm,
                max_guide_step: self.limits.max_guide_step_mm,
            },
        };
        config.validate()?;
        if config.needle_length() <= g.tip_to_skin_mm - g.guide_to_skin_mm {
            return Err(ConfigError::invalid(
                "geometry.tip_to_skin_mm",
                "needle too short to pass through the guide",
            ));
        }
        Ok(config)
    }

    fn targets(&self, sim: &SimConfig) -> Result<Vec<Target>, ConfigError> {
        let c = &self.campaign;
        let pairs: Vec<[f64; 2]> = match &c.targets {
            Some(t) => t.clone(),
            None => c
                .depths_mm
                .iter()
                .flat_map(|d| c.offsets_mm.iter().map(move |o| [*d, *o]))
                .collect(),
        };
        if pairs.is_empty() {
            return Err(ConfigError::invalid("campaign.targets", "no targets"));
        }
        let depth_max = sim.tissue_end() - sim.skin_x;
        pairs
            .into_iter()
            .map(|[depth, offset]| {
                if !(depth > 0.0 && depth < depth_max) || !offset.is_finite() {
                    return Err(ConfigError::invalid(
                        "campaign.targets",
                        format!("target ({depth}, {offset}) outside the tissue region (0, {depth_max}) mm"),
                    ));
                }
                Ok(Target::new(sim.skin_x + depth, offset))
            })
            .collect()
    }

    pub fn into_scenario(self) -> Result<Scenario, ConfigError> {
        let sim = self.sim_config()?;
        let targets = self.targets(&sim)?;
        if self.campaign.repetitions == 0 {
            return Err(ConfigError::invalid("campaign.repetitions", "must be at least 1"));
        }
        self.planner.settings.validate().map_err(|e| prefixed("planner", e))?;
        self.planner.ce.validate().map_err(|e| prefixed("planner.ce", e))?;
        self.tracker.settings.validate()?;
        self.tracker.ce.validate().map_err(|e| prefixed("tracker.ce", e))?;
        self.kinematics.validate()?;
        self.sensor.validate()?;
        self.perturbation.validate()?;
        Ok(Scenario {
            sim,
            targets,
            perturbation: self.perturbation,
            sensor: self.sensor,
            mode: self.planner.mode,
            plan: self.planner.settings,
            plan_ce: self.planner.ce,
            track: self.tracker.settings,
            track_ce: self.tracker.ce,
            kinematics: self.kinematics,
            repetitions: self.campaign.repetitions,
            seed: self.campaign.seed,
            file: self,
        })
    }
}

impl Scenario {
    /// Parses and validates a scenario document.
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        for section in REQUIRED_SECTIONS {
            if !table.contains_key(section) {
                return Err(ScenarioError::MissingSection(section.to_string()));
            }
        }
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Ok(file.into_scenario()?)
    }

    pub fn phantom() -> Self {
        Self::from_toml_str(PHANTOM_TOML).expect("bundled scenario is valid")
    }

    /// Scenario document as TOML, suitable for a run snapshot.
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(&self.file).expect("scenario serializes")
    }

    /// Simulator configuration of the plant: model tissue with μ scaled.
    pub fn plant_config(&self) -> SimConfig {
        let mut c = self.sim.clone();
        for layer in &mut c.layers {
            layer.mu *= self.perturbation.mu_scale;
        }
        c
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.file.campaign.seed = seed;
        self
    }
}

pub fn parse_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_phantom_matches_reference_config() {
        let s = Scenario::phantom();
        let p = SimConfig::phantom();
        assert_eq!(s.sim.n_nodes, p.n_nodes);
        assert_eq!(s.sim.young_modulus, 200e9);
        assert!((s.sim.second_moment - p.second_moment).abs() < 1e-15);
        assert_eq!(s.sim.guide_x, -41.0);
        assert_eq!(s.sim.tip_to_skin, 28.5);
        assert_eq!(s.sim.layers.len(), 2);
        assert_eq!((s.sim.layers[0].mu, s.sim.layers[1].mu), (1.82e3, 3.63e3));
        assert_eq!((s.sim.layers[0].alpha, s.sim.layers[1].alpha), (8.74, 8.74));
        let same_moment = SimConfig {
            second_moment: p.second_moment,
            ..s.sim.clone()
        };
        assert_eq!(same_moment, p);
        assert_eq!(s.targets.len(), 15);
        assert_eq!(s.repetitions, 10);
    }

    fn replace(from: &str, to: &str) -> String {
        assert!(PHANTOM_TOML.contains(from), "{from}");
        PHANTOM_TOML.replacen(from, to, 1)
    }

    #[test]
    fn missing_tissue_section_named() {
        let text: String = PHANTOM_TOML
            .lines()
            .filter(|l| !l.contains("tissue") && !l.starts_with("depth_mm") && !l.starts_with("mu_kpa") && !l.starts_with("alpha") && !l.starts_with("weight"))
            .collect::<Vec<_>>()
            .join("\n");
        let err = Scenario::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::MissingSection(ref s) if s == "tissue"), "{err}");
        assert!(err.to_string().contains("tissue"));
    }

    #[test]
    fn negative_element_length_rejected() {
        let err = Scenario::from_toml_str(&replace("element_length_mm = 3.0", "element_length_mm = -3.0")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("needle.element_length_mm") && msg.contains("positive"), "{msg}");
    }

    #[test]
    fn unknown_key_named() {
        let err = Scenario::from_toml_str(&replace("[geometry]", "[geometry]\nguide_mm = 3")).unwrap_err();
        assert!(err.to_string().contains("guide_mm"), "{err}");
    }

    #[test]
    fn typo_in_flattened_section_named() {
        let err = Scenario::from_toml_str(&replace("horizon = 60", "horizon = 60\nhorizn = 3")).unwrap_err();
        assert!(err.to_string().contains("horizn"), "{err}");
        let err = Scenario::from_toml_str(&replace("window = 5", "window = 5\nwindw = 3")).unwrap_err();
        assert!(err.to_string().contains("windw"), "{err}");
    }

    #[test]
    fn target_outside_tissue_rejected() {
        let err = Scenario::from_toml_str(&replace("repetitions = 10", "repetitions = 10\ntargets = [[90.0, 0.0]]")).unwrap_err();
        assert!(err.to_string().contains("campaign.targets"), "{err}");
        let err = Scenario::from_toml_str(&replace("repetitions = 10", "repetitions = 0")).unwrap_err();
        assert!(err.to_string().contains("campaign.repetitions"), "{err}");
    }

    #[test]
    fn nested_setting_errors_carry_section() {
        let err = Scenario::from_toml_str(&replace("elite_fraction = 0.1\nmax_iterations = 30", "elite_fraction = 1.5\nmax_iterations = 30")).unwrap_err();
        assert!(err.to_string().contains("planner.ce.elite_fraction"), "{err}");
    }

    #[test]
    fn snapshot_round_trips() {
        let s = Scenario::phantom();
        let again = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn plant_scales_mu() {
        let s = Scenario::phantom();
        let plant = s.plant_config();
        assert!((plant.layers[0].mu - 1.1 * 1.82e3).abs() < 1e-9);
        assert_eq!(plant.young_modulus, s.sim.young_modulus);
    }

    #[test]
    fn parse_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        std::fs::write(&path, PHANTOM_TOML).unwrap();
        assert_eq!(parse_scenario(&path).unwrap(), Scenario::phantom());
        assert!(matches!(parse_scenario(dir.path().join("none.toml")), Err(ScenarioError::Io { .. })));
    }
}
