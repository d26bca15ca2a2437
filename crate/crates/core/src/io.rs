//! CSV and JSON exchange formats.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::ce::{CeIteration, CeParams};
use crate::em::{ErrorReport, GridDataset, GridPoint};
use crate::error::{EmError, SimError};
use crate::planner::{CostBreakdown, NominalTrajectory, PlanMode, PlanSettings, Target};
use crate::sim::{ControlInput, Flip, SimState, Simulator};

/// One trajectory row: the state at `step` and the control applied from it.
/// The last row carries a zero control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub db_x: f64,
    pub dg_y: f64,
    pub flip: i8,
    pub bvl: i8,
    pub tip_x: f64,
    pub tip_y: f64,
    pub tip_theta: f64,
    pub strain_energy: f64,
}

impl TrajectoryRow {
    pub fn new(sim: &Simulator, step: usize, state: &SimState, control: Option<&ControlInput>) -> Result<Self, SimError> {
        let tip = state.tip();
        let u = control.copied().unwrap_or_else(|| ControlInput::new(0.0, 0.0, Flip::Keep));
        Ok(Self {
            step,
            db_x: u.advance,
            dg_y: u.guide_shift,
            flip: u.flip.as_i8(),
            bvl: state.bevel().as_i8(),
            tip_x: tip.x,
            tip_y: tip.y,
            tip_theta: tip.theta,
            strain_energy: sim.strain_energy(state)?,
        })
    }

    pub fn control(&self) -> ControlInput {
        ControlInput::new(self.db_x, self.dg_y, Flip::from_i8(self.flip))
    }
}

/// Closed-loop row: trajectory columns for the plant plus the measurement
/// taken at this state and the bevel controller's decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub step: usize,
    pub db_x: f64,
    pub dg_y: f64,
    pub flip: i8,
    pub bvl: i8,
    pub tip_x: f64,
    pub tip_y: f64,
    pub tip_theta: f64,
    pub strain_energy: f64,
    pub measured_x: f64,
    pub measured_y: f64,
    pub flip_decision: i8,
}

impl TrackRow {
    pub fn trajectory(&self) -> TrajectoryRow {
        TrajectoryRow {
            step: self.step,
            db_x: self.db_x,
            dg_y: self.dg_y,
            flip: self.flip,
            bvl: self.bvl,
            tip_x: self.tip_x,
            tip_y: self.tip_y,
            tip_theta: self.tip_theta,
            strain_energy: self.strain_energy,
        }
    }
}

/// Trajectory rows of a plan, evaluated with the simulator it was planned on.
pub fn nominal_rows(sim: &Simulator, nominal: &NominalTrajectory) -> Result<Vec<TrajectoryRow>, SimError> {
    nominal
        .states
        .iter()
        .enumerate()
        .map(|(k, s)| TrajectoryRow::new(sim, k, s, nominal.controls.get(k)))
        .collect()
}

/// Rebuilds a nominal trajectory by replaying the controls stored in `rows`.
pub fn nominal_from_rows(
    sim: &Simulator,
    rows: &[TrajectoryRow],
    mode: PlanMode,
    target: Target,
    settings: &PlanSettings,
) -> Result<NominalTrajectory, SimError> {
    let controls: Vec<ControlInput> = rows
        .iter()
        .take(rows.len().saturating_sub(1))
        .map(TrajectoryRow::control)
        .collect();
    let (states, cost) =
        crate::planner::rollout(sim, &sim.initial_state(), &controls, &target, &settings.weights, settings.dt)?;
    Ok(NominalTrajectory {
        mode,
        target,
        dt: settings.dt,
        controls,
        states,
        cost,
        iterations: 0,
        converged: true,
        history: Vec::new(),
    })
}

pub fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(reader: R) -> Result<Vec<T>, csv::Error> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

/// Plan summary written next to the nominal trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanMetadata {
    pub mode: PlanMode,
    pub target: Target,
    pub settings: PlanSettings,
    pub ce: CeParams,
    pub cost: CostBreakdown,
    pub total_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_tip_error: f64,
    pub flip_count: usize,
}

impl PlanMetadata {
    pub fn new(nominal: &NominalTrajectory, settings: &PlanSettings, ce: &CeParams) -> Self {
        Self {
            mode: nominal.mode,
            target: nominal.target,
            settings: *settings,
            ce: *ce,
            cost: nominal.cost,
            total_cost: nominal.cost.total(),
            iterations: nominal.iterations,
            converged: nominal.converged,
            final_tip_error: nominal.final_tip_error(),
            flip_count: nominal.flip_count(),
        }
    }
}

/// CE history: `iteration, gamma, best_cost, mean_0, mean_1, ...`.
pub fn write_ce_history<W: Write>(writer: W, history: &[CeIteration]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let dim = history.first().map_or(0, |h| h.mean.len());
    let mut header = vec!["iteration".to_string(), "gamma".into(), "best_cost".into()];
    header.extend((0..dim).map(|i| format!("mean_{i}")));
    w.write_record(&header)?;
    for (i, h) in history.iter().enumerate() {
        let mut rec = vec![i.to_string(), h.gamma.to_string(), h.best_cost.to_string()];
        rec.extend(h.mean.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One raw sensor sample of a grid dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSampleRow {
    pub point_id: usize,
    pub true_x: f64,
    pub true_y: f64,
    pub true_z: f64,
    pub meas_x: f64,
    pub meas_y: f64,
    pub meas_z: f64,
    pub indicator: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum GridCsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Em(#[from] EmError),
    #[error("point {0} has inconsistent true positions")]
    Truth(usize),
}

/// Writes every sample; planar datasets get `z = 0`.
pub fn write_grid_csv<W: Write>(writer: W, dataset: &GridDataset) -> Result<(), csv::Error> {
    let z = |v: &[f64]| v.get(2).copied().unwrap_or(0.0);
    let rows: Vec<GridSampleRow> = dataset
        .points()
        .iter()
        .flat_map(|p| {
            p.samples.iter().zip(&p.indicators).map(move |(s, ind)| GridSampleRow {
                point_id: p.id,
                true_x: p.truth[0],
                true_y: p.truth[1],
                true_z: z(&p.truth),
                meas_x: s[0],
                meas_y: s[1],
                meas_z: z(s),
                indicator: *ind,
            })
        })
        .collect();
    write_rows(writer, &rows)
}

/// Groups samples by `point_id` in order of first appearance.
pub fn read_grid_csv<R: Read>(reader: R) -> Result<GridDataset, GridCsvError> {
    let rows: Vec<GridSampleRow> = read_rows(reader)?;
    let mut index: HashMap<usize, usize> = HashMap::new();
    let mut points: Vec<GridPoint> = Vec::new();
    for r in rows {
        let truth = vec![r.true_x, r.true_y, r.true_z];
        let slot = *index.entry(r.point_id).or_insert_with(|| {
            points.push(GridPoint {
                id: r.point_id,
                truth: truth.clone(),
                samples: Vec::new(),
                indicators: Vec::new(),
            });
            points.len() - 1
        });
        let p = &mut points[slot];
        if p.truth != truth {
            return Err(GridCsvError::Truth(r.point_id));
        }
        p.samples.push(vec![r.meas_x, r.meas_y, r.meas_z]);
        p.indicators.push(r.indicator);
    }
    Ok(GridDataset::new(points)?)
}

/// Per-point rows of an error report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointErrorRow {
    pub point_id: usize,
    pub mean_indicator: f64,
    pub error: f64,
}

pub fn error_rows(dataset: &GridDataset, report: &ErrorReport) -> Vec<PointErrorRow> {
    dataset
        .points()
        .iter()
        .zip(dataset.mean_indicators())
        .zip(&report.errors)
        .map(|((p, ind), e)| PointErrorRow {
            point_id: p.id,
            mean_indicator: ind,
            error: *e,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{synthesize_grid, SensorModel};
    use crate::sim::SimConfig;

    #[test]
    fn trajectory_csv_round_trip() {
        let sim = Simulator::new(SimConfig::phantom()).unwrap();
        let s0 = sim.initial_state();
        let u = ControlInput::new(1.0, 0.25, Flip::Toggle);
        let s1 = sim.step(&s0, &u).unwrap();
        let rows = vec![
            TrajectoryRow::new(&sim, 0, &s0, Some(&u)).unwrap(),
            TrajectoryRow::new(&sim, 1, &s1, None).unwrap(),
        ];
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "step,db_x,dg_y,flip,bvl,tip_x,tip_y,tip_theta,strain_energy"
        );
        let back: Vec<TrajectoryRow> = read_rows(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        assert_eq!(back[0].control(), u);
        assert_eq!(back[1].bvl, -back[0].bvl);
    }

    #[test]
    fn track_header() {
        let mut buf = Vec::new();
        let row = TrackRow {
            step: 0,
            db_x: 0.0,
            dg_y: 0.0,
            flip: 0,
            bvl: 1,
            tip_x: 0.0,
            tip_y: 0.0,
            tip_theta: 0.0,
            strain_energy: 0.0,
            measured_x: 0.0,
            measured_y: 0.0,
            flip_decision: 0,
        };
        write_rows(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "step,db_x,dg_y,flip,bvl,tip_x,tip_y,tip_theta,strain_energy,measured_x,measured_y,flip_decision\n"
        ));
    }

    #[test]
    fn grid_csv_round_trip() {
        let grid = synthesize_grid(&SensorModel::default(), &crate::em::cube_grid(2, 10.0), 3).unwrap();
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, &grid).unwrap();
        let back = read_grid_csv(buf.as_slice()).unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn grid_csv_rejects_inconsistent_truth() {
        let text = "point_id,true_x,true_y,true_z,meas_x,meas_y,meas_z,indicator\n\
                    0,0,0,0,0.1,0,0,0.02\n0,1,0,0,0.1,0,0,0.02\n";
        assert!(matches!(read_grid_csv(text.as_bytes()), Err(GridCsvError::Truth(0))));
    }

    #[test]
    fn ce_history_columns() {
        let h = vec![CeIteration { gamma: 2.0, mean: vec![0.5, 1.5], best_cost: 1.0 }];
        let mut buf = Vec::new();
        write_ce_history(&mut buf, &h).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,gamma,best_cost,mean_0,mean_1\n0,2,1,0.5,1.5\n");
    }
}
