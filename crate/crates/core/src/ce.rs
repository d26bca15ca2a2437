//! Cross-entropy search over Gaussian-distributed parameter vectors.
//!
//! Each iteration draws `N` samples from the current Gaussian, keeps those
//! whose cost is at or below the previous iteration's quantile threshold,
//! and refits mean and covariance to that elite set. The refit is blended
//! with the previous distribution by a constant smoothing factor. Dimensions
//! whose initial variance is zero are held at their initial mean throughout.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CeError, ConfigError};

/// Gaussian sampling density.
#[derive(Debug, Clone, PartialEq)]
pub struct CeDistribution {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl CeDistribution {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        Self { mean, covariance }
    }

    /// Independent components with the given standard deviations.
    pub fn diagonal(mean: &[f64], std_dev: &[f64]) -> Self {
        let var = DVector::from_iterator(std_dev.len(), std_dev.iter().map(|s| s * s));
        Self {
            mean: DVector::from_column_slice(mean),
            covariance: DMatrix::from_diagonal(&var),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let n = self.dim();
        if n == 0 {
            return Err(ConfigError::invalid("distribution", "zero-dimensional"));
        }
        if self.covariance.shape() != (n, n) {
            return Err(ConfigError::invalid(
                "distribution.covariance",
                format!("shape {:?} does not match mean length {n}", self.covariance.shape()),
            ));
        }
        if self.mean.iter().chain(self.covariance.iter()).any(|v| !v.is_finite()) {
            return Err(ConfigError::invalid("distribution", "non-finite entry"));
        }
        if (0..n).any(|i| self.covariance[(i, i)] < 0.0) {
            return Err(ConfigError::invalid("distribution.covariance", "negative variance"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CeParams {
    pub sample_count: usize,
    pub elite_fraction: f64,
    pub max_iterations: usize,
    /// Stop once the mean moves less than this between iterations.
    pub tolerance: f64,
    /// Added to every active diagonal entry after each refit.
    pub covariance_floor: f64,
    /// Weight of the elite refit against the previous distribution; 1 uses
    /// the refit alone.
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for CeParams {
    fn default() -> Self {
        Self {
            sample_count: 64,
            elite_fraction: 0.1,
            max_iterations: 30,
            tolerance: 1e-4,
            covariance_floor: 1e-6,
            smoothing: 0.5,
            seed: 0,
        }
    }
}

impl CeParams {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    /// Number of samples at the quantile, `⌈ρN⌉`.
    pub fn elite_count(&self) -> usize {
        (self.elite_fraction * self.sample_count as f64).ceil() as usize
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sample_count < 2 {
            return Err(ConfigError::invalid("sample_count", "at least 2 samples required"));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction < 1.0) {
            return Err(ConfigError::invalid("elite_fraction", "must lie in (0, 1)"));
        }
        if self.elite_count() < 2 {
            return Err(ConfigError::invalid(
                "elite_fraction",
                "elite_fraction * sample_count must round up to at least 2",
            ));
        }
        if self.max_iterations == 0 {
            return Err(ConfigError::invalid("max_iterations", "must be at least 1"));
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return Err(ConfigError::invalid("smoothing", "must lie in (0, 1]"));
        }
        if !(self.tolerance >= 0.0) || !(self.covariance_floor >= 0.0) {
            return Err(ConfigError::invalid("tolerance", "tolerances must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeIteration {
    /// Quantile threshold computed from this iteration's costs.
    pub gamma: f64,
    /// Mean after the refit.
    pub mean: Vec<f64>,
    /// Best cost seen so far, over all iterations.
    pub best_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeResult {
    pub best_sample: Vec<f64>,
    pub best_cost: f64,
    pub distribution: CeDistribution,
    pub history: Vec<CeIteration>,
    pub converged: bool,
}

/// Indices of the samples with cost at or below `gamma_prev`. When none
/// qualifies, the `elite_count` cheapest samples are returned instead.
pub fn elite_set(costs: &[f64], gamma_prev: f64, elite_count: usize) -> Vec<usize> {
    let elites: Vec<usize> = (0..costs.len()).filter(|&i| costs[i] <= gamma_prev).collect();
    if !elites.is_empty() {
        return elites;
    }
    let mut order = ranked(costs);
    order.truncate(elite_count.min(costs.len()));
    order.sort_unstable();
    order
}

/// The `⌈ρN⌉`-th smallest cost.
///
/// # Panics
/// If `costs` is empty.
pub fn quantile_threshold(costs: &[f64], rho: f64) -> f64 {
    assert!(!costs.is_empty(), "quantile of an empty cost list");
    let k = ((rho * costs.len() as f64).ceil() as usize).clamp(1, costs.len());
    costs[ranked(costs)[k - 1]]
}

/// Sample indices in ascending cost order; ties keep sample order.
fn ranked(costs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]));
    order
}

/// Mean and biased scatter of the elites, with `floor` added to the diagonal.
///
/// # Panics
/// If `elites` is empty or the vectors differ in length.
pub fn update_params(elites: &[&[f64]], floor: f64) -> CeDistribution {
    assert!(!elites.is_empty(), "update with no elites");
    let n = elites[0].len();
    let k = elites.len() as f64;
    let mut mean = DVector::zeros(n);
    for z in elites {
        assert_eq!(z.len(), n);
        mean += DVector::from_column_slice(z);
    }
    mean /= k;
    let mut cov = DMatrix::zeros(n, n);
    for z in elites {
        let d = DVector::from_column_slice(z) - &mean;
        cov.ger(1.0 / k, &d, &d, 1.0);
    }
    for i in 0..n {
        cov[(i, i)] += floor;
    }
    CeDistribution::new(mean, cov)
}

/// Matrix `L` with `L Lᵀ = Σ`, restricted to the active dimensions.
fn sampling_factor(cov: &DMatrix<f64>, active: &[usize]) -> DMatrix<f64> {
    let n = cov.nrows();
    let m = active.len();
    let sub = DMatrix::from_fn(m, m, |i, j| {
        0.5 * (cov[(active[i], active[j])] + cov[(active[j], active[i])])
    });
    let factor = match sub.clone().cholesky() {
        Some(ch) => ch.unpack(),
        None => {
            let eig = sub.symmetric_eigen();
            let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
        }
    };
    let mut full = DMatrix::zeros(n, m);
    for (i, &r) in active.iter().enumerate() {
        full.row_mut(r).copy_from(&factor.row(i));
    }
    full
}

/// Draws `count` samples in a fixed order from one seeded stream.
fn draw(
    dist: &CeDistribution,
    active: &[usize],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let factor = sampling_factor(&dist.covariance, active);
    (0..count)
        .map(|_| {
            let xi = DVector::from_iterator(active.len(), (0..active.len()).map(|_| StandardNormal.sample(rng)));
            (&dist.mean + &factor * xi).iter().copied().collect()
        })
        .collect()
}

/// Minimises `objective` starting from `init`.
///
/// Samples are evaluated in parallel but drawn from a single generator in
/// a fixed order, so a given seed always produces the same result.
pub fn optimize<F, E>(
    objective: F,
    init: &CeDistribution,
    params: &CeParams,
) -> Result<CeResult, CeError<E>>
where
    F: Fn(&[f64]) -> Result<f64, E> + Sync,
    E: Send,
{
    params.validate()?;
    init.validate()?;
    let n = init.dim();
    let active: Vec<usize> = (0..n).filter(|&i| init.covariance[(i, i)] > 0.0).collect();
    let frozen: Vec<usize> = (0..n).filter(|&i| init.covariance[(i, i)] <= 0.0).collect();
    let elite_count = params.elite_count();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut dist = init.clone();
    let mut gamma_prev = f64::INFINITY;
    let mut best_sample = init.mean.iter().copied().collect::<Vec<_>>();
    let mut best_cost = f64::INFINITY;
    let mut history = Vec::with_capacity(params.max_iterations);
    let mut converged = false;

    for _ in 0..params.max_iterations {
        let samples = draw(&dist, &active, params.sample_count, &mut rng);
        let costs = samples
            .par_iter()
            .map(|z| objective(z))
            .collect::<Result<Vec<f64>, E>>()
            .map_err(CeError::Objective)?;
        if let Some(&bad) = costs.iter().find(|c| !c.is_finite()) {
            return Err(CeError::NonFiniteCost(bad));
        }

        let order = ranked(&costs);
        if costs[order[0]] < best_cost {
            best_cost = costs[order[0]];
            best_sample = samples[order[0]].clone();
        }
        let gamma = quantile_threshold(&costs, params.elite_fraction);
        let elites = elite_set(&costs, gamma_prev, elite_count);

        let refs: Vec<&[f64]> = elites.iter().map(|&i| samples[i].as_slice()).collect();
        let fit = update_params(&refs, 0.0);
        let a = params.smoothing;
        let mut next = CeDistribution::new(
            &fit.mean * a + &dist.mean * (1.0 - a),
            &fit.covariance * a + &dist.covariance * (1.0 - a),
        );
        for &i in &active {
            next.covariance[(i, i)] += params.covariance_floor;
        }
        for &f in &frozen {
            next.mean[f] = init.mean[f];
            next.covariance.row_mut(f).fill(0.0);
            next.covariance.column_mut(f).fill(0.0);
        }
        let shift = (&next.mean - &dist.mean).norm();
        dist = next;
        gamma_prev = gamma;
        history.push(CeIteration {
            gamma,
            mean: dist.mean.iter().copied().collect(),
            best_cost,
        });
        if shift < params.tolerance {
            converged = true;
            break;
        }
    }

    Ok(CeResult {
        best_sample,
        best_cost,
        distribution: dist,
        history,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::convert::Infallible;

    fn quadratic(c: &[f64]) -> impl Fn(&[f64]) -> Result<f64, Infallible> + Sync + '_ {
        move |z| Ok(z.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    fn params(seed: u64) -> CeParams {
        CeParams {
            sample_count: 100,
            elite_fraction: 0.1,
            max_iterations: 50,
            ..CeParams::default()
        }
        .with_seed(seed)
    }

    #[test]
    fn elite_set_examples() {
        let costs = [1.0, 2.0, 3.0];
        assert_eq!(elite_set(&costs, f64::INFINITY, 1), vec![0, 1, 2]);
        assert_eq!(elite_set(&costs, 2.0, 1), vec![0, 1]);
        assert_eq!(elite_set(&[5.0, 4.0, 6.0, 7.0], 1.0, 2), vec![0, 1]);
    }

    #[test]
    fn quantile_examples() {
        let costs: Vec<f64> = (1..=10).rev().map(f64::from).collect();
        assert_eq!(quantile_threshold(&costs, 0.2), 2.0);
        assert_eq!(quantile_threshold(&[3.5; 7], 0.3), 3.5);
        assert_eq!(quantile_threshold(&[9.0], 0.01), 9.0);
    }

    #[test]
    fn update_examples() {
        let d = update_params(&[&[1.0, 2.0], &[3.0, 4.0]], 0.0);
        assert_eq!(d.mean.as_slice(), &[2.0, 3.0]);
        assert_eq!(d.covariance, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));

        let d = update_params(&[&[0.5, -1.5]], 1e-6);
        assert_eq!(d.mean.as_slice(), &[0.5, -1.5]);
        assert_eq!(d.covariance, DMatrix::from_diagonal_element(2, 2, 1e-6));

        let d = update_params(&[&[1.0, -2.0], &[-1.0, 2.0]], 0.0);
        assert_eq!(d.mean.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn converges_on_quadratic() {
        let c = [1.0, -2.0, 0.5, 3.0, -0.25];
        let init = CeDistribution::diagonal(&[0.0; 5], &[2.0; 5]);
        for seed in 0..10 {
            let r = optimize(quadratic(&c), &init, &params(seed)).unwrap();
            let err: f64 = r.distribution.mean.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err < 1e-3, "seed {seed}: err {err} after {} iterations", r.history.len());
        }
    }

    #[test]
    fn constant_objective() {
        let init = CeDistribution::diagonal(&[1.0, 2.0], &[0.5, 0.5]);
        let p = CeParams {
            max_iterations: 3,
            ..params(1)
        };
        let r = optimize(|_: &[f64]| Ok::<_, Infallible>(7.0), &init, &p).unwrap();
        assert_eq!(r.history[0].best_cost, 7.0);
        assert_eq!(r.best_cost, 7.0);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let c = [0.3; 4];
        let init = CeDistribution::diagonal(&[0.0; 4], &[1.0; 4]);
        let a = optimize(quadratic(&c), &init, &params(11)).unwrap();
        let b = optimize(quadratic(&c), &init, &params(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frozen_dimensions_stay_at_mean() {
        let c = [1.0, 1.0, 1.0];
        let init = CeDistribution::diagonal(&[0.0, 0.25, 0.0], &[1.0, 0.0, 1.0]);
        let p = CeParams {
            covariance_floor: 1e-6,
            ..params(5)
        };
        let r = optimize(quadratic(&c), &init, &p).unwrap();
        assert_eq!(r.best_sample[1], 0.25);
        assert_eq!(r.distribution.mean[1], 0.25);
        assert_eq!(r.distribution.covariance[(1, 1)], 0.0);
    }

    #[test]
    fn zero_covariance_returns_mean() {
        let init = CeDistribution::diagonal(&[0.1, 0.2], &[0.0, 0.0]);
        let r = optimize(quadratic(&[1.0, 1.0]), &init, &params(0)).unwrap();
        assert_eq!(r.best_sample, vec![0.1, 0.2]);
    }

    #[test]
    fn rejects_bad_configuration() {
        let init = CeDistribution::diagonal(&[], &[]);
        assert!(matches!(
            optimize(quadratic(&[]), &init, &params(0)),
            Err(CeError::Config(_))
        ));
        let init = CeDistribution::diagonal(&[0.0], &[1.0]);
        let p = CeParams {
            sample_count: 10,
            ..params(0)
        };
        assert!(matches!(optimize(quadratic(&[0.0]), &init, &p), Err(CeError::Config(_))));
    }

    #[test]
    fn objective_errors_propagate() {
        let init = CeDistribution::diagonal(&[0.0], &[1.0]);
        let r = optimize(|_: &[f64]| Err::<f64, _>("boom"), &init, &params(0));
        assert!(matches!(r, Err(CeError::Objective("boom"))));
        let r = optimize(|_: &[f64]| Ok::<_, Infallible>(f64::NAN), &init, &params(0));
        assert!(matches!(r, Err(CeError::NonFiniteCost(_))));
    }

    #[test]
    fn sample_variance_matches_distribution() {
        let sigma = 1.7;
        let dist = CeDistribution::diagonal(&[0.0, 0.0], &[sigma, sigma]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs = draw(&dist, &[0, 1], 10_000, &mut rng);
        for d in 0..2 {
            let m = xs.iter().map(|x| x[d]).sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x[d] - m).powi(2)).sum::<f64>() / xs.len() as f64;
            assert!((v / (sigma * sigma) - 1.0).abs() < 0.05, "variance {v}");
        }
    }

    #[test]
    fn singular_covariance_uses_eigen_fallback() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = sampling_factor(&cov, &[0, 1]);
        assert!((&l * l.transpose() - &cov).norm() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn best_cost_never_increases(seed in any::<u64>()) {
            let init = CeDistribution::diagonal(&[0.0; 3], &[1.0; 3]);
            let r = optimize(quadratic(&[0.5, -0.5, 2.0]), &init, &CeParams { max_iterations: 15, ..params(seed) }).unwrap();
            for w in r.history.windows(2) {
                prop_assert!(w[1].best_cost <= w[0].best_cost);
            }
        }

        #[test]
        fn refit_covariance_is_psd(
            pts in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 1..12),
            floor in 0.0..1e-3f64,
        ) {
            let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
            let d = update_params(&refs, floor);
            prop_assert!((&d.covariance - d.covariance.transpose()).norm() < 1e-12);
            let eig = d.covariance.clone().symmetric_eigen();
            prop_assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-10));
        }
    }
}
