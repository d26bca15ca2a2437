//! Closed-loop insertions against a perturbed plant, and target campaigns.
//!
//! The plant is a second simulator with scaled tissue stiffness and a
//! rigidly offset needle. The controller only sees the plant through the
//! EM sensor.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bang_bang::decide_flip;
use crate::em::Sensor;
use crate::error::{ConfigError, EmError, HarnessError, PlanError};
use crate::io::{nominal_rows, write_ce_history, write_rows, PlanMetadata, TrackRow, TrajectoryRow};
use crate::planner::{plan_with_mode, planning_config, NominalTrajectory, PlanMode, Target};
use crate::scenario::Scenario;
use crate::seed::mix_seed;
use crate::sim::{Flip, Pose2, SimState, Simulator};
use crate::tracker::{apply_feedback, track_step_with_flip, TrackSettings};

/// Outcome of one closed-loop insertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertionResult {
    pub target: Target,
    pub seed: u64,
    pub plant_tip: Pose2,
    pub model_tip: Pose2,
    /// Plant tip to target (mm).
    pub targeting_error: f64,
    /// Final sensor reading to target (mm).
    pub measured_error: f64,
    /// Plant tip to target when the nominal controls are replayed blind.
    pub open_loop_error: Option<f64>,
    pub flip_count: usize,
    /// Sum of |guide shift| over the insertion (mm).
    pub guide_travel: f64,
    /// Largest plant strain energy along the insertion.
    pub peak_strain_energy: f64,
    pub trajectory: Vec<TrackRow>,
}

/// Plant and model simulators for a scenario and plan mode.
pub fn simulators(scenario: &Scenario, mode: PlanMode) -> Result<(Simulator, Simulator), HarnessError> {
    let model = Simulator::new(planning_config(&scenario.sim, mode, &scenario.plan))?;
    let plant = Simulator::new(planning_config(&scenario.plant_config(), mode, &scenario.plan))?;
    Ok((plant, model))
}

fn plant_start(scenario: &Scenario, plant: &Simulator) -> Result<SimState, HarnessError> {
    let p = &scenario.perturbation;
    Ok(plant.with_rigid_offset(&plant.initial_state(), p.lateral_offset_mm, p.angular_offset_rad)?)
}

fn track_settings(scenario: &Scenario, mode: PlanMode) -> TrackSettings {
    match mode {
        PlanMode::Manipulation => scenario.track,
        PlanMode::Steering => TrackSettings {
            guide_sd: 0.0,
            ..scenario.track
        },
    }
}

/// Final plant tip error when the nominal controls are applied without
/// feedback. `None` when the plant solver fails along the way.
pub fn open_loop_error(scenario: &Scenario, nominal: &NominalTrajectory) -> Result<Option<f64>, HarnessError> {
    let (plant, _) = simulators(scenario, nominal.mode)?;
    let mut s = plant_start(scenario, &plant)?;
    for u in &nominal.controls {
        match plant.step(&s, u) {
            Ok(next) => s = next,
            Err(_) => return Ok(None),
        }
    }
    let tip = s.tip();
    Ok(Some(nominal.target.distance_to(tip.x, tip.y)))
}

/// The planar sensor used by the run with `seed`.
pub fn run_sensor(scenario: &Scenario, seed: u64) -> Result<Sensor, HarnessError> {
    let model = scenario.sensor.with_seed(mix_seed(mix_seed(seed, 2), scenario.sensor.seed));
    Sensor::new(model, 2).map_err(|e| match e {
        EmError::Config(c) => HarnessError::Config(c),
        other => HarnessError::Config(ConfigError::invalid("sensor", other.to_string())),
    })
}

/// Tracks `nominal` on the perturbed plant with sensor feedback.
///
/// Each step reads the sensor at the plant tip and pins the model to the
/// reading. The flip comes from the bevel controller once the estimated tip
/// is in tissue and from the plan before that; the tracker then picks the
/// continuous input for that flip. The input goes to both plant and model.
pub fn run_insertion(scenario: &Scenario, nominal: &NominalTrajectory, seed: u64) -> Result<InsertionResult, HarnessError> {
    let mode = nominal.mode;
    let target = nominal.target;
    let (plant_sim, model_sim) = simulators(scenario, mode)?;
    let settings = track_settings(scenario, mode);
    let ce = scenario.track_ce.with_seed(mix_seed(seed, 1));
    let mut sensor = run_sensor(scenario, seed)?;
    let skin_x = model_sim.config().skin_x;

    let mut plant = plant_start(scenario, &plant_sim)?;
    let mut model = model_sim.initial_state();
    let mut rows = Vec::with_capacity(nominal.controls.len() + 1);
    let mut flips = 0;
    let mut guide_travel = 0.0;
    let mut peak = 0.0f64;

    let read = |sensor: &mut Sensor, s: &SimState| -> (f64, f64) {
        let tip = s.tip();
        let m = sensor.read(&[tip.x, tip.y]).expect("planar sensor");
        (m[0], m[1])
    };

    for k in 0..nominal.controls.len() {
        let measured = read(&mut sensor, &plant);
        model = apply_feedback(&model_sim, &model, measured, &settings)?;
        let est = model.tip();
        let lookahead = target.x - est.x;
        // The bevel only steers in tissue; in air the plan's flip sets the entry side.
        let decision = if est.x <= skin_x {
            nominal.controls[k].flip
        } else if lookahead > 0.0 {
            decide_flip(est, model.bevel(), &target, &scenario.kinematics, lookahead)
        } else {
            Flip::Keep
        };
        let mut u = track_step_with_flip(&model_sim, &model, nominal, k, &settings, &ce, decision)?;
        u.flip = decision;

        let energy = plant_sim.strain_energy(&plant)?;
        peak = peak.max(energy);
        rows.push(track_row(&plant, k, &u, energy, measured, decision));

        plant = plant_sim.step(&plant, &u)?;
        model = model_sim.step(&model, &u)?;
        flips += usize::from(decision.is_toggle());
        guide_travel += u.guide_shift.abs();
    }

    let measured = read(&mut sensor, &plant);
    let energy = plant_sim.strain_energy(&plant)?;
    peak = peak.max(energy);
    let idle = crate::sim::ControlInput::new(0.0, 0.0, Flip::Keep);
    rows.push(track_row(&plant, nominal.controls.len(), &idle, energy, measured, Flip::Keep));

    let plant_tip = plant.tip();
    Ok(InsertionResult {
        target,
        seed,
        plant_tip,
        model_tip: model.tip(),
        targeting_error: target.distance_to(plant_tip.x, plant_tip.y),
        measured_error: target.distance_to(measured.0, measured.1),
        open_loop_error: open_loop_error(scenario, nominal)?,
        flip_count: flips,
        guide_travel,
        peak_strain_energy: peak,
        trajectory: rows,
    })
}

fn track_row(
    s: &SimState,
    step: usize,
    u: &crate::sim::ControlInput,
    strain_energy: f64,
    measured: (f64, f64),
    decision: Flip,
) -> TrackRow {
    let tip = s.tip();
    TrackRow {
        step,
        db_x: u.advance,
        dg_y: u.guide_shift,
        flip: u.flip.as_i8(),
        bvl: s.bevel().as_i8(),
        tip_x: tip.x,
        tip_y: tip.y,
        tip_theta: tip.theta,
        strain_energy,
        measured_x: measured.0,
        measured_y: measured.1,
        flip_decision: decision.as_i8(),
    }
}

/// Plan seed for target `index`.
pub fn plan_seed(master: u64, index: usize) -> u64 {
    mix_seed(mix_seed(master, index as u64), 0)
}

/// Run seed for repetition `rep` on target `index`.
pub fn run_seed(master: u64, index: usize, rep: usize) -> u64 {
    mix_seed(mix_seed(master, index as u64), rep as u64 + 1)
}

/// Plans the scenario's insertion toward `target`.
pub fn plan_target(scenario: &Scenario, target: Target, seed: u64) -> Result<NominalTrajectory, PlanError> {
    plan_with_mode(&scenario.sim, target, &scenario.plan, &scenario.plan_ce.with_seed(seed), scenario.mode)
}

/// One campaign row. Failed runs keep their identifiers and the error text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub target_index: usize,
    pub repetition: usize,
    pub depth_mm: f64,
    pub offset_mm: f64,
    pub seed: u64,
    pub status: String,
    pub targeting_error: Option<f64>,
    pub open_loop_error: Option<f64>,
    pub measured_error: Option<f64>,
    pub flip_count: Option<usize>,
    pub guide_travel: Option<f64>,
    pub peak_strain_energy: Option<f64>,
    pub tip_x: Option<f64>,
    pub tip_y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// Target index, or `all` for the whole campaign.
    pub group: String,
    pub depth_mm: Option<f64>,
    pub offset_mm: Option<f64>,
    pub runs: usize,
    pub failures: usize,
    pub mean_error: f64,
    pub sd_error: f64,
    pub mean_open_loop_error: f64,
    pub sd_open_loop_error: f64,
    /// Runs where closed loop beat the open-loop replay.
    pub closed_better: usize,
    pub mean_flips: f64,
}

/// Mean and sample standard deviation; `(0, 0)` for an empty slice.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates runs in order: one row per target and a final `all` row.
pub fn summarize(runs: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: Vec<(String, Option<f64>, Option<f64>, Vec<&RunRecord>)> = Vec::new();
    for r in runs {
        match groups.iter_mut().find(|g| g.0 == r.target_index.to_string()) {
            Some(g) => g.3.push(r),
            None => groups.push((r.target_index.to_string(), Some(r.depth_mm), Some(r.offset_mm), vec![r])),
        }
    }
    groups.push(("all".into(), None, None, runs.iter().collect()));
    groups
        .into_iter()
        .map(|(group, depth_mm, offset_mm, rs)| {
            let ok: Vec<&RunRecord> = rs.iter().copied().filter(|r| r.targeting_error.is_some()).collect();
            let errors: Vec<f64> = ok.iter().filter_map(|r| r.targeting_error).collect();
            let open: Vec<f64> = ok.iter().filter_map(|r| r.open_loop_error).collect();
            let flips: Vec<f64> = ok.iter().filter_map(|r| r.flip_count).map(|f| f as f64).collect();
            let closed_better = ok
                .iter()
                .filter(|r| matches!((r.targeting_error, r.open_loop_error), (Some(c), Some(o)) if c < o))
                .count();
            let (mean_error, sd_error) = mean_sd(&errors);
            let (mean_open_loop_error, sd_open_loop_error) = mean_sd(&open);
            SummaryRow {
                group,
                depth_mm,
                offset_mm,
                runs: rs.len(),
                failures: rs.len() - ok.len(),
                mean_error,
                sd_error,
                mean_open_loop_error,
                sd_open_loop_error,
                closed_better,
                mean_flips: mean_sd(&flips).0,
            }
        })
        .collect()
}

/// Per-target plans and per-run results of a campaign.
#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub plans: Vec<Result<NominalTrajectory, String>>,
    pub runs: Vec<RunRecord>,
    pub trajectories: Vec<Option<Vec<TrackRow>>>,
    pub summary: Vec<SummaryRow>,
}

/// Plans each target once, then runs every repetition against it.
pub fn run_campaign(scenario: &Scenario) -> CampaignResult {
    let master = scenario.seed;
    let plans: Vec<Result<NominalTrajectory, String>> = scenario
        .targets
        .par_iter()
        .enumerate()
        .map(|(i, t)| plan_target(scenario, *t, plan_seed(master, i)).map_err(|e| e.to_string()))
        .collect();

    let jobs: Vec<(usize, usize)> = (0..scenario.targets.len())
        .flat_map(|i| (0..scenario.repetitions).map(move |j| (i, j)))
        .collect();
    let outcomes: Vec<(RunRecord, Option<Vec<TrackRow>>)> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let target = scenario.targets[i];
            let seed = run_seed(master, i, j);
            let outcome = match &plans[i] {
                Ok(nominal) => run_insertion(scenario, nominal, seed).map_err(|e| e.to_string()),
                Err(e) => Err(format!("planning failed: {e}")),
            };
            record(scenario, i, j, target, seed, outcome)
        })
        .collect();
    let (runs, trajectories): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    let summary = summarize(&runs);
    CampaignResult { plans, runs, trajectories, summary }
}

fn record(
    scenario: &Scenario,
    i: usize,
    j: usize,
    target: Target,
    seed: u64,
    outcome: Result<InsertionResult, String>,
) -> (RunRecord, Option<Vec<TrackRow>>) {
    let mut r = RunRecord {
        target_index: i,
        repetition: j,
        depth_mm: target.x - scenario.sim.skin_x,
        offset_mm: target.y,
        seed,
        status: "ok".into(),
        targeting_error: None,
        open_loop_error: None,
        measured_error: None,
        flip_count: None,
        guide_travel: None,
        peak_strain_energy: None,
        tip_x: None,
        tip_y: None,
    };
    match outcome {
        Ok(res) => {
            r.targeting_error = Some(res.targeting_error);
            r.open_loop_error = res.open_loop_error;
            r.measured_error = Some(res.measured_error);
            r.flip_count = Some(res.flip_count);
            r.guide_travel = Some(res.guide_travel);
            r.peak_strain_energy = Some(res.peak_strain_energy);
            r.tip_x = Some(res.plant_tip.x);
            r.tip_y = Some(res.plant_tip.y);
            (r, Some(res.trajectory))
        }
        Err(e) => {
            r.status = format!("failed: {e}");
            (r, None)
        }
    }
}

/// Writes `scenario.toml`, `summary.csv`, `runs.csv`, per-target plans
/// under `plans/` and per-run trajectories under `runs/`.
pub fn write_campaign(dir: &Path, scenario: &Scenario, result: &CampaignResult) -> Result<(), HarnessError> {
    fs::create_dir_all(dir.join("plans"))?;
    fs::create_dir_all(dir.join("runs"))?;
    fs::write(dir.join("scenario.toml"), scenario.to_toml_string())?;
    write_rows(fs::File::create(dir.join("summary.csv"))?, &result.summary)?;
    write_rows(fs::File::create(dir.join("runs.csv"))?, &result.runs)?;
    for (i, plan) in result.plans.iter().enumerate() {
        if let Ok(nominal) = plan {
            write_plan(&dir.join("plans"), &format!("target_{i:02}"), scenario, nominal)?;
        }
    }
    for (r, traj) in result.runs.iter().zip(&result.trajectories) {
        if let Some(rows) = traj {
            let name = format!("target_{:02}_rep_{:02}.csv", r.target_index, r.repetition);
            write_rows(fs::File::create(dir.join("runs").join(name))?, rows)?;
        }
    }
    Ok(())
}

/// Writes `<stem>.csv` (trajectory), `<stem>.json` (metadata) and
/// `<stem>_ce.csv` (optimizer history).
pub fn write_plan(dir: &Path, stem: &str, scenario: &Scenario, nominal: &NominalTrajectory) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let sim = Simulator::new(planning_config(&scenario.sim, nominal.mode, &scenario.plan))?;
    let rows: Vec<TrajectoryRow> = nominal_rows(&sim, nominal)?;
    write_rows(fs::File::create(dir.join(format!("{stem}.csv")))?, &rows)?;
    let meta = PlanMetadata::new(nominal, &scenario.plan, &scenario.plan_ce);
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta)?)?;
    write_ce_history(fs::File::create(dir.join(format!("{stem}_ce.csv")))?, &nominal.history)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record_with(err: f64, open: f64) -> RunRecord {
        RunRecord {
            target_index: 0,
            repetition: 0,
            depth_mm: 40.0,
            offset_mm: 5.0,
            seed: 0,
            status: "ok".into(),
            targeting_error: Some(err),
            open_loop_error: Some(open),
            measured_error: Some(err),
            flip_count: Some(1),
            guide_travel: Some(0.0),
            peak_strain_energy: Some(0.0),
            tip_x: Some(40.0),
            tip_y: Some(5.0),
        }
    }

    #[test]
    fn zero_errors_summarize_to_zero() {
        let runs = vec![record_with(0.0, 0.0); 4];
        let s = summarize(&runs);
        assert_eq!(s.len(), 2);
        assert_eq!((s[1].mean_error, s[1].sd_error), (0.0, 0.0));
        assert_eq!(s[1].group, "all");
        assert_eq!(s[1].closed_better, 0);
    }

    #[test]
    fn summary_statistics() {
        let mut runs = vec![record_with(1.0, 2.0), record_with(3.0, 2.0)];
        let mut failed = record_with(0.0, 0.0);
        failed.status = "failed: x".into();
        failed.targeting_error = None;
        runs.push(failed);
        let s = &summarize(&runs)[0];
        assert_eq!(s.runs, 3);
        assert_eq!(s.failures, 1);
        assert_eq!(s.mean_error, 2.0);
        assert!((s.sd_error - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.closed_better, 1);
    }

    #[test]
    fn seeds_distinct() {
        let mut seeds: Vec<u64> = (0..15).flat_map(|i| (0..10).map(move |j| run_seed(7, i, j))).collect();
        seeds.extend((0..15).map(|i| plan_seed(7, i)));
        let n = seeds.len();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), n);
    }
}
