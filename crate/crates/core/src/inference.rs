//! Residual bootstrap bands for ρ̂ and β̂, and their coverage metrics.

use log::debug;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::FunctionalSample;
use crate::error::{Error, Result};
use crate::estimator::{FitConfig, FitResult, PreparedFit};
use crate::spatial::SpatialWeights;

/// Largest tolerated share of failed bootstrap refits, in percent.
pub const MAX_FAILED_REFITS_PCT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub alpha: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 199,
            alpha: 0.05,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        let needed = (2.0 / self.alpha - 1.0).ceil();
        if (self.replicates as f64) < needed {
            return Err(Error::Config(format!(
                "{} bootstrap replicates are too few for alpha = {}; need at least {needed}",
                self.replicates, self.alpha
            )));
        }
        Ok(())
    }
}

/// Pointwise bootstrap bands.
#[derive(Debug, Clone)]
pub struct BootstrapSurfaces {
    pub alpha: f64,
    /// Successful replicates used for the quantiles.
    pub replicates: usize,
    pub failed: usize,
    pub lower_beta: DMatrix<f64>,
    pub upper_beta: DMatrix<f64>,
    pub lower_rho: DMatrix<f64>,
    pub upper_rho: DMatrix<f64>,
    /// (ρ*, β*) per successful replicate, when requested.
    pub replicate_store: Option<Vec<(DMatrix<f64>, DMatrix<f64>)>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Beta,
    Rho,
}

impl BootstrapSurfaces {
    pub fn band(&self, which: Surface) -> (&DMatrix<f64>, &DMatrix<f64>) {
        match which {
            Surface::Beta => (&self.lower_beta, &self.upper_beta),
            Surface::Rho => (&self.lower_rho, &self.upper_rho),
        }
    }
}

/// RNG for stream `stream` of a run seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Residual bootstrap from raw data.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_ci(
    fit: &FitResult,
    y: &FunctionalSample,
    x: &FunctionalSample,
    w: &SpatialWeights,
    config: &FitConfig,
    boot: &BootstrapConfig,
    seed: u64,
) -> Result<BootstrapSurfaces> {
    let prepared = PreparedFit::new(y, x, w, config)?;
    bootstrap_prepared(&prepared, fit, boot, seed, false)
}

/// Residual bootstrap reusing the instruments of a prepared fit.
///
/// Responses are Ŷ + ε*, with Ŷ the fitted values of `fit` and ε* whole
/// centered residual curves drawn with replacement; each replicate is refit at
/// the smoothing parameters of `fit`.
pub fn bootstrap_prepared(
    prepared: &PreparedFit,
    fit: &FitResult,
    boot: &BootstrapConfig,
    seed: u64,
    keep_replicates: bool,
) -> Result<BootstrapSurfaces> {
    boot.validate()?;
    let n = fit.residuals.n();
    if n == 0 || n != prepared.response().n() {
        return Err(Error::DimensionMismatch(format!(
            "fit has {n} units, prepared design has {}",
            prepared.response().n()
        )));
    }
    let resid = fit.residuals.centered();
    let (lr, lb) = fit.lambdas;
    let grid = fit.fitted.grid().clone();

    let draws: Vec<Result<(DMatrix<f64>, DMatrix<f64>)>> = (0..boot.replicates)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let eps = resid.select_rows(&idx);
            let y_star = FunctionalSample::new(fit.fitted.values() + eps.values(), grid.clone())?;
            let coef = prepared.solve_response(&y_star, lr, lb)?;
            prepared.surfaces(&coef)
        })
        .collect();

    let mut ok = Vec::with_capacity(draws.len());
    let mut failed = 0;
    for (k, d) in draws.into_iter().enumerate() {
        match d {
            Ok(s) => ok.push(s),
            Err(e) => {
                debug!("bootstrap replicate {k} failed: {e}");
                failed += 1;
            }
        }
    }
    if failed * 100 > MAX_FAILED_REFITS_PCT * boot.replicates {
        return Err(Error::TooManyFailures {
            failed,
            total: boot.replicates,
            what: "bootstrap refits",
            limit_pct: MAX_FAILED_REFITS_PCT,
        });
    }
    let rho: Vec<&DMatrix<f64>> = ok.iter().map(|s| &s.0).collect();
    let beta: Vec<&DMatrix<f64>> = ok.iter().map(|s| &s.1).collect();
    let (lower_rho, upper_rho) = pointwise_band(&rho, boot.alpha);
    let (lower_beta, upper_beta) = pointwise_band(&beta, boot.alpha);
    Ok(BootstrapSurfaces {
        alpha: boot.alpha,
        replicates: ok.len(),
        failed,
        lower_beta,
        upper_beta,
        lower_rho,
        upper_rho,
        replicate_store: keep_replicates.then_some(ok),
    })
}

/// Pointwise (α/2, 1−α/2) quantiles across a stack of equally shaped surfaces.
pub fn pointwise_band(stack: &[&DMatrix<f64>], alpha: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (r, c) = stack[0].shape();
    let mut lower = DMatrix::zeros(r, c);
    let mut upper = DMatrix::zeros(r, c);
    let mut buf = vec![0.0; stack.len()];
    for j in 0..c {
        for i in 0..r {
            for (b, s) in buf.iter_mut().zip(stack) {
                *b = s[(i, j)];
            }
            buf.sort_by(f64::total_cmp);
            lower[(i, j)] = quantile_sorted(&buf, alpha / 2.0);
            upper[(i, j)] = quantile_sorted(&buf, 1.0 - alpha / 2.0);
        }
    }
    (lower, upper)
}

fn check_grid(truth: &DMatrix<f64>, lower: &DMatrix<f64>) -> Result<()> {
    if truth.shape() != lower.shape() {
        return Err(Error::DimensionMismatch(format!(
            "truth grid {:?} differs from band grid {:?}",
            truth.shape(),
            lower.shape()
        )));
    }
    Ok(())
}

/// |(1−α) − share of grid points with lower ≤ truth ≤ upper|.
pub fn cpd(truth: &DMatrix<f64>, bands: &BootstrapSurfaces, which: Surface) -> Result<f64> {
    let (lower, upper) = bands.band(which);
    check_grid(truth, lower)?;
    let covered = truth
        .iter()
        .zip(lower.iter().zip(upper.iter()))
        .filter(|(t, (l, u))| *l <= *t && *t <= *u)
        .count();
    Ok(((1.0 - bands.alpha) - covered as f64 / truth.len() as f64).abs())
}

/// Grid average of the interval score.
pub fn interval_score(truth: &DMatrix<f64>, bands: &BootstrapSurfaces, which: Surface) -> Result<f64> {
    let (lower, upper) = bands.band(which);
    check_grid(truth, lower)?;
    let k = 2.0 / bands.alpha;
    let total: f64 = truth
        .iter()
        .zip(lower.iter().zip(upper.iter()))
        .map(|(&t, (&l, &u))| {
            let mut s = u - l;
            if t < l {
                s += k * (l - t);
            }
            if t > u {
                s += k * (t - u);
            }
            s.abs()
        })
        .sum();
    Ok(total / truth.len() as f64)
}
