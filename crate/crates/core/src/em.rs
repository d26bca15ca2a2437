//! Simulated electromagnetic tip sensor and the grid statistics used to
//! characterise it.
//!
//! A reading is the true position plus a bias that is fixed for the
//! lifetime of a [`Sensor`] and zero-mean jitter drawn per sample. The bias
//! magnitude follows the error-versus-indicator model: a constant
//! `mean ± sd` band when the field indicator is at or below the threshold,
//! and a straight line in the indicator above it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, EmError};
use crate::seed::mix_seed;

/// Mean bias in an undistorted field (mm).
pub const IDEAL_BIAS_MEAN: f64 = 0.575;
/// Spread of the bias in an undistorted field (mm).
pub const IDEAL_BIAS_SD: f64 = 0.211;
/// Bias growth per unit indicator in a distorted field (mm).
pub const NOISY_SLOPE: f64 = 9.591;
/// Bias at zero indicator on the distorted-field line (mm).
pub const NOISY_INTERCEPT: f64 = 0.051;
/// Sample scatter of the tip sensor in an undistorted field (mm).
pub const TIP_JITTER: f64 = 0.07;
/// Indicator value separating trusted from distorted readings.
pub const INDICATOR_THRESHOLD: f64 = 0.0547;
/// Largest indicator value the tracker reports.
pub const INDICATOR_MAX: f64 = 9.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorModel {
    pub indicator: f64,
    pub ideal_mean: f64,
    pub ideal_sd: f64,
    pub noisy_slope: f64,
    pub noisy_intercept: f64,
    pub jitter: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            indicator: 0.0239,
            ideal_mean: IDEAL_BIAS_MEAN,
            ideal_sd: IDEAL_BIAS_SD,
            noisy_slope: NOISY_SLOPE,
            noisy_intercept: NOISY_INTERCEPT,
            jitter: TIP_JITTER,
            threshold: INDICATOR_THRESHOLD,
            seed: 0,
        }
    }
}

impl SensorModel {
    /// A sensor that reports the true position exactly.
    pub fn exact() -> Self {
        Self {
            ideal_mean: 0.0,
            ideal_sd: 0.0,
            noisy_slope: 0.0,
            noisy_intercept: 0.0,
            jitter: 0.0,
            ..Self::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn with_indicator(self, indicator: f64) -> Self {
        Self { indicator, ..self }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=INDICATOR_MAX).contains(&self.indicator) {
            return Err(ConfigError::invalid(
                "sensor.indicator",
                format!("must lie in [0, {INDICATOR_MAX}]"),
            ));
        }
        let fields = [
            ("sensor.ideal_mean", self.ideal_mean),
            ("sensor.ideal_sd", self.ideal_sd),
            ("sensor.noisy_slope", self.noisy_slope),
            ("sensor.noisy_intercept", self.noisy_intercept),
            ("sensor.jitter", self.jitter),
            ("sensor.threshold", self.threshold),
        ];
        for (key, value) in fields {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ConfigError::invalid(key, "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn is_ideal(&self) -> bool {
        self.indicator <= self.threshold
    }

    /// Bias magnitude on the distorted-field line at the current indicator.
    pub fn noisy_bias(&self) -> f64 {
        self.noisy_slope * self.indicator + self.noisy_intercept
    }

    fn draw_magnitude(&self, rng: &mut ChaCha8Rng) -> f64 {
        if !self.is_ideal() {
            return self.noisy_bias();
        }
        if self.ideal_sd == 0.0 {
            return self.ideal_mean;
        }
        // Magnitudes are non-negative; resample the rare negative draw.
        loop {
            let z: f64 = rng.sample(StandardNormal);
            let m = self.ideal_mean + self.ideal_sd * z;
            if m >= 0.0 {
                return m;
            }
        }
    }
}

/// One sensor instance: a fixed bias and its own jitter stream.
#[derive(Debug, Clone)]
pub struct Sensor {
    model: SensorModel,
    bias: Vec<f64>,
    rng: ChaCha8Rng,
}

impl Sensor {
    /// Draws the bias for a `dim`-dimensional sensor (2 or 3).
    pub fn new(model: SensorModel, dim: usize) -> Result<Self, EmError> {
        model.validate()?;
        if !(2..=3).contains(&dim) {
            return Err(EmError::Dimension { expected: 3, got: dim });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        let magnitude = model.draw_magnitude(&mut rng);
        let direction = random_direction(&mut rng, dim);
        let bias = direction.iter().map(|c| c * magnitude).collect();
        Ok(Self { model, bias, rng })
    }

    pub fn model(&self) -> &SensorModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Returns `truth + bias + jitter`.
    pub fn read(&mut self, truth: &[f64]) -> Result<Vec<f64>, EmError> {
        if truth.len() != self.dim() {
            return Err(EmError::Dimension { expected: self.dim(), got: truth.len() });
        }
        let sd = self.model.jitter / (self.dim() as f64).sqrt();
        let mut out = Vec::with_capacity(truth.len());
        for (t, b) in truth.iter().zip(&self.bias) {
            let z: f64 = self.rng.sample(StandardNormal);
            out.push(t + b + sd * z);
        }
        Ok(out)
    }

    /// Current indicator reading.
    pub fn indicator(&self) -> f64 {
        self.model.indicator
    }
}

/// Single reading from a fresh sensor built from `model`.
pub fn simulate_reading(truth: &[f64], model: &SensorModel) -> Result<Vec<f64>, EmError> {
    Sensor::new(*model, truth.len())?.read(truth)
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

/// Componentwise average of the samples.
pub fn mean_position<S: AsRef<[f64]>>(samples: &[S]) -> Result<Vec<f64>, EmError> {
    let first = samples.first().ok_or(EmError::Empty("sample set"))?.as_ref();
    let mut sum = vec![0.0; first.len()];
    for s in samples {
        let s = s.as_ref();
        if s.len() != sum.len() {
            return Err(EmError::Dimension { expected: sum.len(), got: s.len() });
        }
        for (acc, c) in sum.iter_mut().zip(s) {
            *acc += c;
        }
    }
    let m = samples.len() as f64;
    Ok(sum.into_iter().map(|c| c / m).collect())
}

/// Euclidean distance between a mean reading and the true position.
pub fn measurement_error(mean: &[f64], truth: &[f64]) -> Result<f64, EmError> {
    if mean.len() != truth.len() {
        return Err(EmError::Dimension { expected: truth.len(), got: mean.len() });
    }
    Ok(mean.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
}

pub fn dataset_rmse(errors: &[f64]) -> Result<f64, EmError> {
    if errors.is_empty() {
        return Err(EmError::Empty("error list"));
    }
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub id: usize,
    pub truth: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
    pub indicators: Vec<f64>,
}

/// Repeated readings at known positions; every point has the same sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDataset {
    points: Vec<GridPoint>,
}

impl GridDataset {
    pub fn new(points: Vec<GridPoint>) -> Result<Self, EmError> {
        let first = points.first().ok_or(EmError::Empty("grid"))?;
        let dim = first.truth.len();
        let m = first.samples.len();
        if m == 0 {
            return Err(EmError::Empty("sample set"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.samples.len() != m || p.indicators.len() != m {
                return Err(EmError::Ragged {
                    point: i,
                    expected: m,
                    got: p.samples.len().min(p.indicators.len()),
                });
            }
            if p.truth.len() != dim {
                return Err(EmError::Dimension { expected: dim, got: p.truth.len() });
            }
            if let Some(s) = p.samples.iter().find(|s| s.len() != dim) {
                return Err(EmError::Dimension { expected: dim, got: s.len() });
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[GridPoint] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points[0].truth.len()
    }

    pub fn samples_per_point(&self) -> usize {
        self.points[0].samples.len()
    }

    /// Per-point distance between the mean reading and truth.
    pub fn errors(&self) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| {
                let mean = mean_position(&p.samples).expect("validated on construction");
                measurement_error(&mean, &p.truth).expect("validated on construction")
            })
            .collect()
    }

    /// Average indicator reading at each point.
    pub fn mean_indicators(&self) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| p.indicators.iter().sum::<f64>() / p.indicators.len() as f64)
            .collect()
    }
}

/// Root-mean-square scatter of samples about their point means.
pub fn dataset_jitter(dataset: &GridDataset) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in dataset.points() {
        let mean = mean_position(&p.samples).expect("validated on construction");
        for s in &p.samples {
            sum += s.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            count += 1;
        }
    }
    (sum / count as f64).sqrt()
}

/// `n³` points on a cube of side `side` centred on the origin.
pub fn cube_grid(n: usize, side: f64) -> Vec<Vec<f64>> {
    let step = if n > 1 { side / (n - 1) as f64 } else { 0.0 };
    let c = |i: usize| -0.5 * side * (n > 1) as u8 as f64 + i as f64 * step;
    let mut out = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out.push(vec![c(i), c(j), c(k)]);
            }
        }
    }
    out
}

/// Readings of `samples_per_point` at each position, one sensor (and so one
/// bias) per point.
pub fn synthesize_grid(
    model: &SensorModel,
    truths: &[Vec<f64>],
    samples_per_point: usize,
) -> Result<GridDataset, EmError> {
    let mut points = Vec::with_capacity(truths.len());
    for (i, truth) in truths.iter().enumerate() {
        let mut sensor = Sensor::new(model.with_seed(mix_seed(model.seed, i as u64)), truth.len())?;
        let samples = (0..samples_per_point)
            .map(|_| sensor.read(truth))
            .collect::<Result<Vec<_>, _>>()?;
        points.push(GridPoint {
            id: i,
            truth: truth.clone(),
            samples,
            indicators: vec![model.indicator; samples_per_point],
        });
    }
    GridDataset::new(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorFit {
    pub breakpoint: f64,
    pub ideal_mean: f64,
    pub ideal_sd: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl IndicatorFit {
    /// Predicted error at `indicator`.
    pub fn predict(&self, indicator: f64) -> f64 {
        if indicator <= self.breakpoint {
            self.ideal_mean
        } else {
            self.slope * indicator + self.intercept
        }
    }
}

/// Constant fit at or below `breakpoint`, least-squares line above it.
pub fn fit_error_indicator(pairs: &[(f64, f64)], breakpoint: f64) -> Result<IndicatorFit, EmError> {
    let (below, above): (Vec<&(f64, f64)>, Vec<&(f64, f64)>) = pairs.iter().partition(|(i, _)| *i <= breakpoint);
    if below.len() < 2 || above.len() < 2 {
        return Err(EmError::TooFewPoints { below: below.len(), above: above.len() });
    }
    let n = below.len() as f64;
    let ideal_mean = below.iter().map(|p| p.1).sum::<f64>() / n;
    let ideal_sd = (below.iter().map(|p| (p.1 - ideal_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();

    let n = above.len() as f64;
    let mx = above.iter().map(|p| p.0).sum::<f64>() / n;
    let my = above.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = above.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = above.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(EmError::TooFewPoints { below: below.len(), above: 1 });
    }
    let slope = sxy / sxx;
    Ok(IndicatorFit {
        breakpoint,
        ideal_mean,
        ideal_sd,
        slope,
        intercept: my - slope * mx,
    })
}

/// Nearest-rank percentile of the indicator samples.
pub fn indicator_threshold(samples: &[f64], percentile: f64) -> Result<f64, EmError> {
    if samples.is_empty() {
        return Err(EmError::Empty("indicator sample set"));
    }
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(EmError::Percentile(percentile));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (percentile / 100.0 * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub errors: Vec<f64>,
    pub rmse: f64,
    pub jitter: f64,
    /// Absent when the data does not straddle the breakpoint.
    pub fit: Option<IndicatorFit>,
    pub threshold: f64,
}

/// Runs the full statistics pipeline over a dataset.
pub fn analyze(dataset: &GridDataset, breakpoint: f64, percentile: f64) -> Result<ErrorReport, EmError> {
    let errors = dataset.errors();
    let rmse = dataset_rmse(&errors)?;
    let jitter = dataset_jitter(dataset);
    let pairs: Vec<(f64, f64)> = dataset.mean_indicators().into_iter().zip(errors.iter().copied()).collect();
    let fit = match fit_error_indicator(&pairs, breakpoint) {
        Ok(fit) => Some(fit),
        Err(EmError::TooFewPoints { .. }) => None,
        Err(e) => return Err(e),
    };
    let all: Vec<f64> = dataset.points().iter().flat_map(|p| p.indicators.iter().copied()).collect();
    let threshold = indicator_threshold(&all, percentile)?;
    Ok(ErrorReport { errors, rmse, jitter, fit, threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    #[test]
    fn exact_sensor_reports_truth() {
        let mut s = Sensor::new(SensorModel::exact(), 2).unwrap();
        assert_eq!(s.read(&[3.0, -1.5]).unwrap(), vec![3.0, -1.5]);
        assert_eq!(simulate_reading(&[1.0, 2.0, 3.0], &SensorModel::exact()).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn threshold_indicator_is_ideal() {
        let model = SensorModel {
            indicator: INDICATOR_THRESHOLD,
            ideal_sd: 0.0,
            jitter: 0.0,
            ..Default::default()
        };
        assert!(model.is_ideal());
        let s = Sensor::new(model, 3).unwrap();
        assert!((norm(s.bias()) - IDEAL_BIAS_MEAN).abs() < 1e-12);
        let above = Sensor::new(model.with_indicator(0.0548), 3).unwrap();
        assert!((norm(above.bias()) - (NOISY_SLOPE * 0.0548 + NOISY_INTERCEPT)).abs() < 1e-12);
    }

    #[test]
    fn noisy_branch_mean_error() {
        let model = SensorModel::default().with_indicator(0.3);
        let expected = 9.591 * 0.3 + 0.051;
        let n = 10_000;
        let mean = (0..n)
            .map(|i| {
                let m = model.with_seed(mix_seed(11, i));
                let r = simulate_reading(&[0.0, 0.0], &m).unwrap();
                norm(&r)
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - expected).abs() / expected < 0.05, "mean {mean}");
    }

    #[test]
    fn ideal_branch_mean_error() {
        let n = 10_000;
        let mean = (0..n)
            .map(|i| norm(&simulate_reading(&[5.0, 5.0], &SensorModel::default().with_seed(i)).unwrap()
                .iter().map(|c| c - 5.0).collect::<Vec<_>>()))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.575).abs() / 0.575 < 0.10, "mean {mean}");
    }

    #[test]
    fn jitter_scatter_matches_model() {
        let model = SensorModel { jitter: 0.5, ..SensorModel::exact() };
        let mut s = Sensor::new(model, 2).unwrap();
        let n = 20_000;
        let ms = (0..n).map(|_| s.read(&[0.0, 0.0]).unwrap()).map(|r| r[0] * r[0] + r[1] * r[1]).sum::<f64>() / n as f64;
        assert!((ms.sqrt() - 0.5).abs() < 0.01);
    }

    #[test]
    fn bias_is_fixed_per_sensor() {
        let mut s = Sensor::new(SensorModel { jitter: 0.0, ..Default::default() }, 2).unwrap();
        let a = s.read(&[0.0, 0.0]).unwrap();
        let b = s.read(&[0.0, 0.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, s.bias());
    }

    #[test]
    fn rejects_bad_models() {
        assert!(Sensor::new(SensorModel::default().with_indicator(10.0), 2).is_err());
        assert!(Sensor::new(SensorModel { jitter: -0.1, ..Default::default() }, 2).is_err());
        assert!(Sensor::new(SensorModel::default(), 4).is_err());
        let mut s = Sensor::new(SensorModel::default(), 2).unwrap();
        assert!(matches!(s.read(&[0.0; 3]), Err(EmError::Dimension { .. })));
    }

    #[test]
    fn mean_position_examples() {
        assert_eq!(mean_position(&[[0.0, 0.0, 0.0], [2.0, 2.0, 2.0]]).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(mean_position(&[[4.0, -2.0]]).unwrap(), vec![4.0, -2.0]);
        assert_eq!(mean_position(&[[1.0, 0.0], [-1.0, 2.0], [3.0, 1.0], [1.0, -3.0]]).unwrap(), vec![1.0, 0.0]);
        assert!(mean_position::<[f64; 2]>(&[]).is_err());
    }

    #[test]
    fn measurement_error_examples() {
        assert_eq!(measurement_error(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(measurement_error(&[3.0, 4.0, 0.0], &[0.0, 0.0, 0.0]).unwrap(), 5.0);
    }

    #[test]
    fn rmse_examples() {
        assert!((dataset_rmse(&[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!((dataset_rmse(&[0.7; 9]).unwrap() - 0.7).abs() < 1e-15);
        assert!(dataset_rmse(&[]).is_err());
    }

    fn point(truth: Vec<f64>, samples: Vec<Vec<f64>>) -> GridPoint {
        let m = samples.len();
        GridPoint { id: 0, truth, samples, indicators: vec![0.0; m] }
    }

    #[test]
    fn jitter_examples() {
        let flat = GridDataset::new(vec![point(vec![0.0, 0.0], vec![vec![1.0, 1.0]; 4])]).unwrap();
        assert_eq!(dataset_jitter(&flat), 0.0);
        let pm = GridDataset::new(vec![point(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![-1.0, 0.0]])]).unwrap();
        assert_eq!(dataset_jitter(&pm), 1.0);
    }

    #[test]
    fn ragged_grid_rejected() {
        let pts = vec![
            point(vec![0.0, 0.0], vec![vec![0.0, 0.0]; 3]),
            point(vec![1.0, 0.0], vec![vec![1.0, 0.0]; 2]),
        ];
        assert!(matches!(GridDataset::new(pts), Err(EmError::Ragged { point: 1, .. })));
        assert!(GridDataset::new(vec![]).is_err());
    }

    #[test]
    fn fit_roundtrip_recovers_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pairs = Vec::new();
        for i in 0..200 {
            let ind = 0.06 + 0.4 * i as f64 / 200.0;
            let z: f64 = rng.sample(StandardNormal);
            pairs.push((ind, 9.591 * ind + 0.051 + 0.1 * z));
        }
        for _ in 0..100 {
            let ind = rng.random_range(0.0..0.05);
            let z: f64 = rng.sample(StandardNormal);
            pairs.push((ind, 0.575 + 0.211 * z));
        }
        let fit = fit_error_indicator(&pairs, INDICATOR_THRESHOLD).unwrap();
        assert!((fit.slope - 9.591).abs() / 9.591 < 0.05, "slope {}", fit.slope);
        assert!((fit.ideal_mean - 0.575).abs() < 0.06);
    }

    #[test]
    fn fit_exact_on_collinear_points() {
        let pairs = [(0.0, 1.0), (0.01, 3.0), (0.1, 1.2), (0.2, 2.2), (0.5, 5.2)];
        let fit = fit_error_indicator(&pairs, 0.05).unwrap();
        assert!((fit.slope - 10.0).abs() < 1e-12);
        assert!((fit.intercept - 0.2).abs() < 1e-12);
        assert!((fit.ideal_mean - 2.0).abs() < 1e-12);
        assert!((fit.ideal_sd - 2f64.sqrt()).abs() < 1e-12);
        assert!(matches!(fit_error_indicator(&pairs[..3], 0.05), Err(EmError::TooFewPoints { .. })));
    }

    #[test]
    fn nearest_rank_threshold() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(indicator_threshold(&s, 95.0).unwrap(), 95.0);
        assert_eq!(indicator_threshold(&[0.3; 7], 95.0).unwrap(), 0.3);
        assert!(indicator_threshold(&[], 95.0).is_err());
        assert!(indicator_threshold(&s, 100.0).is_err());
    }

    #[test]
    fn reference_constants() {
        let m = SensorModel::default();
        assert_eq!((m.ideal_mean, m.ideal_sd), (0.575, 0.211));
        assert_eq!((m.noisy_slope, m.noisy_intercept), (9.591, 0.051));
        assert_eq!((m.jitter, m.threshold), (0.07, 0.0547));
        assert!(m.is_ideal());
    }

    #[test]
    fn threshold_separates_environments() {
        // Ideal indicator distribution: mean 0.0239, sd 0.0138, range [0.0061, 0.0779].
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<f64> = (0..10_000)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                (0.0239 + 0.0138 * z).clamp(0.0061, 0.0779)
            })
            .collect();
        let t = indicator_threshold(&samples, 95.0).unwrap();
        assert!(t < 0.0684, "threshold {t}");
        assert!(INDICATOR_THRESHOLD < 0.0684);
    }

    #[test]
    fn synthetic_grid_recovers_model_mean() {
        let model = SensorModel::default().with_indicator(0.3).with_seed(21);
        let grid = synthesize_grid(&model, &cube_grid(5, 100.0), 100).unwrap();
        let errs = grid.errors();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        assert!((mean - model.noisy_bias()).abs() / model.noisy_bias() < 0.05);
        let report = analyze(&grid, INDICATOR_THRESHOLD, 95.0).unwrap();
        assert!(report.fit.is_none());
        assert_eq!(report.threshold, 0.3);
        assert!((report.jitter - 0.07).abs() < 0.005);
    }

    #[test]
    fn ideal_grid_rmse_near_table_value() {
        // The model's own rms bias is sqrt(0.575² + 0.211²) ≈ 0.613 mm.
        let grid = synthesize_grid(&SensorModel::default().with_seed(3), &cube_grid(5, 100.0), 500).unwrap();
        let rmse = dataset_rmse(&grid.errors()).unwrap();
        assert!((rmse - 0.65).abs() / 0.65 < 0.10, "rmse {rmse}");
    }

    #[test]
    fn cube_grid_layout() {
        let g = cube_grid(5, 100.0);
        assert_eq!(g.len(), 125);
        assert_eq!(g[0], vec![-50.0, -50.0, -50.0]);
        assert_eq!(g[124], vec![50.0, 50.0, 50.0]);
    }

    proptest! {
        #[test]
        fn error_translation_invariant(
            a in prop::array::uniform3(-50.0..50.0f64),
            b in prop::array::uniform3(-50.0..50.0f64),
            t in prop::array::uniform3(-50.0..50.0f64),
        ) {
            let e0 = measurement_error(&a, &b).unwrap();
            let at: Vec<f64> = a.iter().zip(&t).map(|(x, y)| x + y).collect();
            let bt: Vec<f64> = b.iter().zip(&t).map(|(x, y)| x + y).collect();
            prop_assert!((e0 - measurement_error(&at, &bt).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn rmse_non_negative(errs in prop::collection::vec(0.0..10.0f64, 1..50)) {
            let r = dataset_rmse(&errs).unwrap();
            prop_assert!(r >= 0.0);
            prop_assert_eq!(r == 0.0, errs.iter().all(|e| *e == 0.0));
        }

        #[test]
        fn jitter_ignores_constant_bias(
            samples in prop::collection::vec(prop::array::uniform2(-1.0..1.0f64), 2..20),
            bias in prop::array::uniform2(-5.0..5.0f64),
        ) {
            let raw: Vec<Vec<f64>> = samples.iter().map(|s| s.to_vec()).collect();
            let shifted: Vec<Vec<f64>> = samples.iter().map(|s| vec![s[0] + bias[0], s[1] + bias[1]]).collect();
            let a = GridDataset::new(vec![point(vec![0.0, 0.0], raw)]).unwrap();
            let b = GridDataset::new(vec![point(vec![0.0, 0.0], shifted)]).unwrap();
            prop_assert!((dataset_jitter(&a) - dataset_jitter(&b)).abs() < 1e-9);
        }
    }
}
