//! Simulation design, accuracy metrics and the Monte Carlo runner.

use std::f64::consts::{PI, SQRT_2};
use std::time::Instant;

use log::{info, warn};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::QuadratureGrid;
use crate::design::FunctionalSample;
use crate::error::{Error, Result};
use crate::estimator::{integrate_predictor, neumann_fitted, FitConfig, PreparedFit, NEUMANN_MAX_ITER, NEUMANN_TOL};
use crate::inference::{bootstrap_prepared, cpd, interval_score, stream_rng, BootstrapConfig, Surface};
use crate::selection::{search_prepared, LambdaGrid};
use crate::spatial::{inverse_distance_weights, SpatialWeights};

/// Number of Fourier frequencies in the simulated predictor.
pub const FOURIER_TERMS: usize = 10;

/// Largest tolerated share of failed replications, in percent.
pub const MAX_FAILED_REPLICATIONS_PCT: usize = 5;

/// How the held-out units are coupled among themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestDesign {
    /// Test units form their own spatial system with inverse-distance weights.
    #[default]
    Spatial,
    /// Test units are mutually independent (W = 0).
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub eta: f64,
    pub grid_size: usize,
    pub seed: u64,
    pub replications: usize,
    pub noise_sd: f64,
    pub test_design: TestDesign,
    pub fit: FitConfig,
    pub lambda_grid: LambdaGrid,
    /// Bootstrap bands per replication; skipped when absent.
    pub bootstrap: Option<BootstrapConfig>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_train: 100,
            n_test: 1000,
            eta: 0.1,
            grid_size: 101,
            seed: 1,
            replications: 50,
            noise_sd: 1.0,
            test_design: TestDesign::default(),
            fit: FitConfig::default(),
            lambda_grid: LambdaGrid::default(),
            bootstrap: None,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if self.grid_size < 3 {
            return Err(Error::Config(format!("grid_size must be at least 3, got {}", self.grid_size)));
        }
        if self.replications < 1 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.n_train < 2 || self.n_test < 1 {
            return Err(Error::Config(format!(
                "need n_train ≥ 2 and n_test ≥ 1, got {} and {}",
                self.n_train, self.n_test
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise_sd must be non-negative, got {}", self.noise_sd)));
        }
        self.lambda_grid.validate()?;
        if let Some(b) = &self.bootstrap {
            b.validate()?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<QuadratureGrid> {
        QuadratureGrid::uniform(self.grid_size)
    }
}

/// X_i(s) = Σ_k k^{-3/2} (ν_{i1k} √2 cos kπs + ν_{i2k} √2 sin kπs).
pub fn gen_predictor<R: Rng + ?Sized>(n: usize, grid: &QuadratureGrid, rng: &mut R) -> FunctionalSample {
    let pts = grid.points();
    let mut values = DMatrix::zeros(n, pts.len());
    for i in 0..n {
        for k in 1..=FOURIER_TERMS {
            let nu1: f64 = rng.sample(StandardNormal);
            let nu2: f64 = rng.sample(StandardNormal);
            let amp = (k as f64).powf(-1.5) * SQRT_2;
            let kf = k as f64 * PI;
            for (j, &s) in pts.iter().enumerate() {
                values[(i, j)] += amp * (nu1 * (kf * s).cos() + nu2 * (kf * s).sin());
            }
        }
    }
    FunctionalSample::new(values, grid.clone()).expect("finite predictor values")
}

pub fn true_beta(t: f64, s: f64) -> f64 {
    2.0 + s + t + 0.5 * (2.0 * PI * s * t).sin()
}

pub fn true_rho(t: f64, u: f64, eta: f64) -> f64 {
    eta * (1.0 + u * t) / (1.0 + (u - t).abs())
}

pub fn true_beta_surface(t_grid: &QuadratureGrid, s_grid: &QuadratureGrid) -> DMatrix<f64> {
    let (t, s) = (t_grid.points(), s_grid.points());
    DMatrix::from_fn(t.len(), s.len(), |a, b| true_beta(t[a], s[b]))
}

pub fn true_rho_surface(grid: &QuadratureGrid, eta: f64) -> DMatrix<f64> {
    let t = grid.points();
    DMatrix::from_fn(t.len(), t.len(), |a, b| true_rho(t[a], t[b], eta))
}

/// Noise-free response (I − 𝒯)⁻¹ ∫Xβ on the predictor grid.
pub fn mean_response(x: &FunctionalSample, w: &SpatialWeights, eta: f64) -> Result<FunctionalSample> {
    let grid = x.grid();
    let forcing = integrate_predictor(x, &true_beta_surface(grid, grid), grid)?;
    Ok(neumann_fitted(w, &true_rho_surface(grid, eta), &forcing, NEUMANN_TOL, NEUMANN_MAX_ITER)?.sample)
}

/// Y = (I − 𝒯)⁻¹ (∫Xβ + ε), ε white noise on the grid.
pub fn gen_response<R: Rng + ?Sized>(
    x: &FunctionalSample,
    w: &SpatialWeights,
    eta: f64,
    noise_sd: f64,
    rng: &mut R,
) -> Result<FunctionalSample> {
    gen_response_tol(x, w, eta, noise_sd, NEUMANN_TOL, rng)
}

/// [`gen_response`] with an explicit Neumann tolerance.
pub fn gen_response_tol<R: Rng + ?Sized>(
    x: &FunctionalSample,
    w: &SpatialWeights,
    eta: f64,
    noise_sd: f64,
    tol: f64,
    rng: &mut R,
) -> Result<FunctionalSample> {
    let grid = x.grid();
    let signal = integrate_predictor(x, &true_beta_surface(grid, grid), grid)?;
    let mut f = signal.into_values();
    for v in f.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v += noise_sd * e;
    }
    let forcing = FunctionalSample::new(f, grid.clone())?;
    Ok(neumann_fitted(w, &true_rho_surface(grid, eta), &forcing, tol, NEUMANN_MAX_ITER)?.sample)
}

fn weighted_sq_norm(m: &DMatrix<f64>, row_w: &[f64], col_w: &[f64]) -> f64 {
    let mut total = 0.0;
    for (j, cw) in col_w.iter().enumerate() {
        if *cw == 0.0 {
            continue;
        }
        for (i, rw) in row_w.iter().enumerate() {
            total += rw * cw * m[(i, j)] * m[(i, j)];
        }
    }
    total
}

/// 100 √(∫∫(ĝ − g)² / ∫∫g²), left-Riemann in both directions.
pub fn rrispee(
    estimate: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    grid_row: &QuadratureGrid,
    grid_col: &QuadratureGrid,
) -> Result<f64> {
    if estimate.shape() != truth.shape() || truth.shape() != (grid_row.len(), grid_col.len()) {
        return Err(Error::DimensionMismatch(format!(
            "estimate {:?}, truth {:?}, grids {}×{}",
            estimate.shape(),
            truth.shape(),
            grid_row.len(),
            grid_col.len()
        )));
    }
    let (rw, cw) = (grid_row.point_weights(), grid_col.point_weights());
    let den = weighted_sq_norm(truth, &rw, &cw);
    if den <= 0.0 {
        return Err(Error::ZeroNorm("true surface"));
    }
    Ok(100.0 * (weighted_sq_norm(&(estimate - truth), &rw, &cw) / den).sqrt())
}

fn check_aligned(a: &FunctionalSample, b: &FunctionalSample) -> Result<()> {
    if a.values().shape() != b.values().shape() || a.grid() != b.grid() {
        return Err(Error::DimensionMismatch(format!(
            "curve sets {:?} and {:?} are not aligned",
            a.values().shape(),
            b.values().shape()
        )));
    }
    Ok(())
}

fn curve_sq_norm(m: &DMatrix<f64>, w: &[f64]) -> f64 {
    weighted_sq_norm(&m.transpose(), w, &vec![1.0; m.nrows()])
}

/// 100 √(Σ_i ∫(Ŷ_i − Y_i)² / Σ_i ∫Y_i²).
pub fn rmspe(pred: &FunctionalSample, truth: &FunctionalSample) -> Result<f64> {
    check_aligned(pred, truth)?;
    let w = truth.grid().point_weights();
    let den = curve_sq_norm(truth.values(), &w);
    if den <= 0.0 {
        return Err(Error::ZeroNorm("true response"));
    }
    Ok(100.0 * (curve_sq_norm(&(pred.values() - truth.values()), &w) / den).sqrt())
}

/// (RMSE, R²) of predictions against observed curves.
pub fn rmse_r2(pred: &FunctionalSample, obs: &FunctionalSample) -> Result<(f64, f64)> {
    let rmse = rmspe(pred, obs)?;
    let w = obs.grid().point_weights();
    let sse = curve_sq_norm(&(pred.values() - obs.values()), &w);
    let sst = curve_sq_norm(obs.centered().values(), &w);
    if sst <= 0.0 {
        return Err(Error::ZeroNorm("response variation"));
    }
    Ok((rmse, 1.0 - sse / sst))
}

/// Metrics of one Monte Carlo replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationMetrics {
    pub replication: usize,
    pub lambda_rho: f64,
    pub lambda_beta: f64,
    pub rrispee_beta: f64,
    pub rrispee_rho: f64,
    pub rmspe: f64,
    pub cpd_beta: Option<f64>,
    pub cpd_rho: Option<f64>,
    pub score_beta: Option<f64>,
    pub score_rho: Option<f64>,
    pub seconds: f64,
}

impl ReplicationMetrics {
    /// (name, value) pairs of the accuracy metrics, timing excluded.
    pub fn metrics(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("rrispee_beta", Some(self.rrispee_beta)),
            ("rrispee_rho", Some(self.rrispee_rho)),
            ("rmspe", Some(self.rmspe)),
            ("cpd_beta", self.cpd_beta),
            ("cpd_rho", self.cpd_rho),
            ("score_beta", self.score_beta),
            ("score_rho", self.score_rho),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub name: String,
    pub mean: f64,
    /// Sample standard deviation / √replications; absent for one replication.
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub error: String,
}

/// Per-replication metrics and their aggregates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricTable {
    pub eta: f64,
    pub n_train: usize,
    pub requested: usize,
    pub replications: Vec<ReplicationMetrics>,
    pub failures: Vec<ReplicationFailure>,
    pub summary: Vec<MetricSummary>,
    pub mean_seconds: f64,
}

impl MetricTable {
    pub fn summary(&self, name: &str) -> Option<&MetricSummary> {
        self.summary.iter().find(|s| s.name == name)
    }

    fn build(config: &SimulationConfig, replications: Vec<ReplicationMetrics>, failures: Vec<ReplicationFailure>) -> Self {
        let mut summary = Vec::new();
        if let Some(first) = replications.first() {
            for (idx, (name, _)) in first.metrics().into_iter().enumerate() {
                let vals: Vec<f64> = replications.iter().filter_map(|r| r.metrics()[idx].1).collect();
                if vals.len() != replications.len() {
                    continue;
                }
                let (mean, se) = mean_se(&vals);
                summary.push(MetricSummary {
                    name: name.to_string(),
                    mean,
                    se,
                });
            }
        }
        let secs: Vec<f64> = replications.iter().map(|r| r.seconds).collect();
        Self {
            eta: config.eta,
            n_train: config.n_train,
            requested: config.replications,
            mean_seconds: if secs.is_empty() { f64::NAN } else { mean_se(&secs).0 },
            replications,
            failures,
            summary,
        }
    }
}

/// Mean and standard error (None for fewer than two values).
pub fn mean_se(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Training and test data of one replication.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub x_train: FunctionalSample,
    pub y_train: FunctionalSample,
    pub w_train: SpatialWeights,
    pub x_test: FunctionalSample,
    pub w_test: SpatialWeights,
    /// Noise-free test responses.
    pub y_test_mean: FunctionalSample,
}

/// Training sample of one replication.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub x: FunctionalSample,
    pub y: FunctionalSample,
    pub w: SpatialWeights,
}

fn draw_training<R: Rng + ?Sized>(config: &SimulationConfig, rng: &mut R) -> Result<TrainingData> {
    let grid = config.grid()?;
    let w = inverse_distance_weights(config.n_train)?;
    let x = gen_predictor(config.n_train, &grid, rng);
    let y = gen_response(&x, &w, config.eta, config.noise_sd, rng)?;
    Ok(TrainingData { x, y, w })
}

/// The training part of [`simulate_replication`], without the test set.
pub fn simulate_training(config: &SimulationConfig, rep: usize) -> Result<TrainingData> {
    draw_training(config, &mut stream_rng(config.seed, rep as u64))
}

/// Draws the data of replication `rep` from its own RNG stream.
pub fn simulate_replication(config: &SimulationConfig, rep: usize) -> Result<SimulatedData> {
    let grid = config.grid()?;
    let mut rng = stream_rng(config.seed, rep as u64);
    let TrainingData {
        x: x_train,
        y: y_train,
        w: w_train,
    } = draw_training(config, &mut rng)?;
    let x_test = gen_predictor(config.n_test, &grid, &mut rng);
    let w_test = match config.test_design {
        TestDesign::Spatial => inverse_distance_weights(config.n_test)?,
        TestDesign::Independent => SpatialWeights::zeros(config.n_test),
    };
    let y_test_mean = mean_response(&x_test, &w_test, config.eta)?;
    Ok(SimulatedData {
        x_train,
        y_train,
        w_train,
        x_test,
        w_test,
        y_test_mean,
    })
}

/// Fits, predicts and scores one replication.
pub fn run_replication(config: &SimulationConfig, rep: usize) -> Result<ReplicationMetrics> {
    let start = Instant::now();
    let data = simulate_replication(config, rep)?;
    let grid = config.grid()?;
    let prepared = PreparedFit::new(&data.y_train, &data.x_train, &data.w_train, &config.fit)?;
    let fit = search_prepared(&prepared, &config.lambda_grid)?.fit;

    let beta_true = true_beta_surface(&grid, &grid);
    let rho_true = true_rho_surface(&grid, config.eta);
    let rrispee_beta = rrispee(&fit.beta_surface, &beta_true, &grid, &grid)?;
    let rrispee_rho = rrispee(&fit.rho_surface, &rho_true, &grid, &grid)?;

    let forcing = integrate_predictor(&data.x_test, &fit.beta_surface, &grid)?;
    let pred = neumann_fitted(
        &data.w_test,
        &fit.rho_surface,
        &forcing,
        config.fit.neumann_tol,
        config.fit.neumann_max_iter,
    )?
    .sample;
    let rmspe = rmspe(&pred, &data.y_test_mean)?;

    let mut m = ReplicationMetrics {
        replication: rep,
        lambda_rho: fit.lambdas.0,
        lambda_beta: fit.lambdas.1,
        rrispee_beta,
        rrispee_rho,
        rmspe,
        cpd_beta: None,
        cpd_rho: None,
        score_beta: None,
        score_rho: None,
        seconds: 0.0,
    };
    if let Some(boot) = &config.bootstrap {
        let seed = config.seed ^ (rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
        let bands = bootstrap_prepared(&prepared, &fit, boot, seed, false)?;
        m.cpd_beta = Some(cpd(&beta_true, &bands, Surface::Beta)?);
        m.cpd_rho = Some(cpd(&rho_true, &bands, Surface::Rho)?);
        m.score_beta = Some(interval_score(&beta_true, &bands, Surface::Beta)?);
        m.score_rho = Some(interval_score(&rho_true, &bands, Surface::Rho)?);
    }
    m.seconds = start.elapsed().as_secs_f64();
    Ok(m)
}

/// Runs all replications and aggregates their metrics.
pub fn monte_carlo(config: &SimulationConfig) -> Result<MetricTable> {
    config.validate()?;
    if 2.0 * config.eta >= 1.0 {
        warn!(
            "eta = {} gives sup ρ = {} ≥ 1; the contraction condition is not guaranteed",
            config.eta,
            2.0 * config.eta
        );
    }
    let results: Vec<Result<ReplicationMetrics>> = (0..config.replications)
        .into_par_iter()
        .map(|r| run_replication(config, r))
        .collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(m) => {
                info!(
                    "replication {r}: RRISPEE(β) {:.4}, RRISPEE(ρ) {:.4}, RMSPE {:.4}",
                    m.rrispee_beta, m.rrispee_rho, m.rmspe
                );
                ok.push(m);
            }
            Err(e) => {
                warn!("replication {r} failed: {e}");
                failures.push(ReplicationFailure {
                    replication: r,
                    error: e.to_string(),
                });
            }
        }
    }
    if failures.len() * 100 > MAX_FAILED_REPLICATIONS_PCT * config.replications || ok.is_empty() {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: config.replications,
            what: "replications",
            limit_pct: MAX_FAILED_REPLICATIONS_PCT,
        });
    }
    Ok(MetricTable::build(config, ok, failures))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::operator_kernel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn surface_formulas() {
        assert_eq!(true_beta(0.0, 0.0), 2.0);
        assert!((true_beta(1.0, 1.0) - 4.0).abs() < 1e-12);
        assert!((true_beta(0.5, 0.5) - 3.5).abs() < 1e-12);
        assert!((true_rho(0.3, 0.3, 0.4) - 0.4 * 1.09).abs() < 1e-15);
        assert_eq!(true_rho(1.0, 1.0, 0.5), 1.0);
        assert!((true_rho(0.0, 1.0, 0.9) - 0.45).abs() < 1e-15);
    }

    #[test]
    fn predictor_moments() {
        let grid = QuadratureGrid::new(vec![0.0, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = gen_predictor(10_000, &grid, &mut rng);
        let col0 = x.values().column(0);
        let mean0 = col0.mean();
        let mean1 = x.values().column(1).mean();
        assert!(mean0.abs() < 0.05 && mean1.abs() < 0.05);
        let var0 = col0.iter().map(|v| (v - mean0).powi(2)).sum::<f64>() / 9_999.0;
        let expected: f64 = (1..=FOURIER_TERMS).map(|k| 2.0 * (k as f64).powi(-3)).sum();
        assert!((var0 / expected - 1.0).abs() < 0.05, "{var0} vs {expected}");
    }

    #[test]
    fn response_trivial_cases() {
        let grid = QuadratureGrid::uniform(21).unwrap();
        let w = inverse_distance_weights(3).unwrap();
        let x = FunctionalSample::new(DMatrix::zeros(3, 21), grid.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = gen_response(&x, &w, 0.5, 0.0, &mut rng).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0));

        let x = gen_predictor(3, &grid, &mut rng);
        let y = gen_response(&x, &SpatialWeights::zeros(3), 0.5, 0.0, &mut rng).unwrap();
        let direct = integrate_predictor(&x, &true_beta_surface(&grid, &grid), &grid).unwrap();
        assert_eq!(y, direct);
    }

    #[test]
    fn response_matches_dense_solve() {
        let grid = QuadratureGrid::uniform(21).unwrap();
        let w = inverse_distance_weights(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = gen_predictor(4, &grid, &mut rng);
        let mut rng_a = ChaCha8Rng::seed_from_u64(3);
        let y = gen_response(&x, &w, 0.5, 1.0, &mut rng_a).unwrap();

        let mut rng_b = ChaCha8Rng::seed_from_u64(3);
        let mut f = integrate_predictor(&x, &true_beta_surface(&grid, &grid), &grid).unwrap().into_values();
        for v in f.iter_mut() {
            let e: f64 = rng_b.sample(StandardNormal);
            *v += e;
        }
        let f = FunctionalSample::new(f, grid.clone()).unwrap();
        let a = w.matrix().kronecker(&operator_kernel(&true_rho_surface(&grid, 0.5), &grid));
        let sol = (DMatrix::identity(84, 84) - a).lu().solve(&f.vec()).unwrap();
        let direct = FunctionalSample::from_vec(&sol, grid).unwrap();
        assert!((y.values() - direct.values()).amax() < 1e-3);
    }

    #[test]
    fn metric_identities() {
        let grid = QuadratureGrid::uniform(11).unwrap();
        let truth = true_beta_surface(&grid, &grid);
        assert_eq!(rrispee(&truth, &truth, &grid, &grid).unwrap(), 0.0);
        assert!((rrispee(&(&truth * 0.0), &truth, &grid, &grid).unwrap() - 100.0).abs() < 1e-9);
        assert!((rrispee(&(&truth * 1.1), &truth, &grid, &grid).unwrap() - 10.0).abs() < 1e-9);
        assert!(rrispee(&truth, &(&truth * 0.0), &grid, &grid).is_err());

        let y = FunctionalSample::new(DMatrix::from_fn(2, 11, |i, j| 1.0 + (i + j) as f64), grid.clone()).unwrap();
        let zero = FunctionalSample::new(DMatrix::zeros(2, 11), grid.clone()).unwrap();
        assert_eq!(rmspe(&y, &y).unwrap(), 0.0);
        assert!((rmspe(&zero, &y).unwrap() - 100.0).abs() < 1e-9);

        let (rmse, r2) = rmse_r2(&y, &y).unwrap();
        assert_eq!((rmse, r2), (0.0, 1.0));
        let mean = FunctionalSample::new(
            DMatrix::from_fn(2, 11, |_, j| y.values().column(j).mean()),
            grid,
        )
        .unwrap();
        assert!(rmse_r2(&mean, &y).unwrap().1.abs() < 1e-12);
    }

    #[test]
    fn standard_errors() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se.unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_se(&[4.0]), (4.0, None));
    }

    #[test]
    fn config_validation() {
        assert!(SimulationConfig::default().validate().is_ok());
        let bad = SimulationConfig {
            eta: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SimulationConfig {
            grid_size: 2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
