//! Quasi-Gaussian BIC and grid search over (λ_ρ, λ_β).

use std::f64::consts::PI;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{DesignMatrices, FunctionalSample};
use crate::error::{Error, Result};
use crate::estimator::{solve_penalized, FitConfig, FitResult, PenaltyAssembly, PreparedFit};
use crate::spatial::SpatialWeights;

/// Candidate smoothing parameters for each penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaGrid {
    pub rho_values: Vec<f64>,
    pub beta_values: Vec<f64>,
    #[serde(default)]
    pub allow_zero: bool,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        let v: Vec<f64> = (-4..=2).map(|e| 10f64.powi(e)).collect();
        Self {
            rho_values: v.clone(),
            beta_values: v,
            allow_zero: false,
        }
    }
}

impl LambdaGrid {
    pub fn new(rho_values: Vec<f64>, beta_values: Vec<f64>, allow_zero: bool) -> Result<Self> {
        let g = Self {
            rho_values,
            beta_values,
            allow_zero,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn singleton(lambda_rho: f64, lambda_beta: f64) -> Result<Self> {
        Self::new(vec![lambda_rho], vec![lambda_beta], lambda_rho == 0.0 || lambda_beta == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rho_values", &self.rho_values), ("beta_values", &self.beta_values)] {
            if v.is_empty() {
                return Err(Error::Config(format!("lambda grid {name} is empty")));
            }
            for (i, &x) in v.iter().enumerate() {
                let ok = x.is_finite() && (x > 0.0 || (x == 0.0 && self.allow_zero));
                if !ok {
                    return Err(Error::Config(format!("lambda grid {name}[{i}] = {x} is not admissible")));
                }
                if i > 0 && x <= v[i - 1] {
                    return Err(Error::Config(format!("lambda grid {name} is not strictly increasing at index {i}")));
                }
            }
        }
        Ok(())
    }

    /// All (λ_ρ, λ_β) pairs, λ_ρ outermost.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.rho_values
            .iter()
            .flat_map(|&r| self.beta_values.iter().map(move |&b| (r, b)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.rho_values.len() * self.beta_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// −(N/2) log(2πσ²) − SSR/(2σ²) for N Gaussian evaluations.
pub fn gaussian_loglik(ssr: f64, sigma2: f64, count: usize) -> Result<f64> {
    if !(sigma2 >= 1e-300) || !sigma2.is_finite() {
        return Err(Error::DegenerateVariance(sigma2));
    }
    Ok(-0.5 * count as f64 * (2.0 * PI * sigma2).ln() - ssr / (2.0 * sigma2))
}

pub fn quasi_loglik(fit: &FitResult) -> Result<f64> {
    gaussian_loglik(fit.ssr(), fit.sigma2_hat, fit.residuals.values().len())
}

/// −2L + ω log(n), n being the number of spatial units.
pub fn bic(fit: &FitResult) -> Result<f64> {
    Ok(-2.0 * quasi_loglik(fit)? + fit.edf * (fit.n() as f64).ln())
}

/// ω = tr[(Π̂ᵀΠ + R)⁻¹ Π̂ᵀΠ].
pub fn effective_df(design: &DesignMatrices, penalty: &PenaltyAssembly) -> Result<f64> {
    Ok(solve_penalized(&design.normal_equations(), &penalty.r)?.edf)
}

/// Outcome at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridEvaluation {
    pub lambda_rho: f64,
    pub lambda_beta: f64,
    pub bic: Option<f64>,
    pub edf: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridSearchOutcome {
    pub lambda_rho: f64,
    pub lambda_beta: f64,
    pub fit: FitResult,
    /// One entry per grid pair, in [`LambdaGrid::pairs`] order.
    pub evaluations: Vec<GridEvaluation>,
    /// Number of first-stage constructions performed during the search.
    pub design_builds: usize,
}

/// Exhaustive BIC search.
pub fn grid_search(
    y: &FunctionalSample,
    x: &FunctionalSample,
    w: &SpatialWeights,
    grid: &LambdaGrid,
    config: &FitConfig,
) -> Result<GridSearchOutcome> {
    grid.validate()?;
    let prepared = PreparedFit::new(y, x, w, config)?;
    search_prepared(&prepared, grid)
}

/// Search over a grid reusing an already prepared design.
pub fn search_prepared(prepared: &PreparedFit, grid: &LambdaGrid) -> Result<GridSearchOutcome> {
    grid.validate()?;
    let builds_before = prepared.first_stage_builds();
    let pairs = grid.pairs();
    let results: Vec<Result<FitResult>> = pairs.par_iter().map(|&(r, b)| prepared.fit_at(r, b)).collect();
    let design_builds = prepared.first_stage_builds() - builds_before;

    let mut evaluations = Vec::with_capacity(pairs.len());
    let mut best: Option<FitResult> = None;
    let mut last_error = String::new();
    for (&(r, b), res) in pairs.iter().zip(results) {
        match res {
            Ok(fit) if fit.bic.is_finite() => {
                evaluations.push(GridEvaluation {
                    lambda_rho: r,
                    lambda_beta: b,
                    bic: Some(fit.bic),
                    edf: Some(fit.edf),
                    error: None,
                });
                if best.as_ref().is_none_or(|cur| better(&fit, cur)) {
                    best = Some(fit);
                }
            }
            Ok(fit) => {
                last_error = format!("non-finite BIC {}", fit.bic);
                evaluations.push(GridEvaluation {
                    lambda_rho: r,
                    lambda_beta: b,
                    bic: None,
                    edf: Some(fit.edf),
                    error: Some(last_error.clone()),
                });
            }
            Err(e) => {
                debug!("grid point ({r:e}, {b:e}) failed: {e}");
                last_error = e.to_string();
                evaluations.push(GridEvaluation {
                    lambda_rho: r,
                    lambda_beta: b,
                    bic: None,
                    edf: None,
                    error: Some(last_error.clone()),
                });
            }
        }
    }
    let fit = best.ok_or(Error::AllFitsFailed {
        attempted: pairs.len(),
        last: last_error,
    })?;
    Ok(GridSearchOutcome {
        lambda_rho: fit.lambdas.0,
        lambda_beta: fit.lambdas.1,
        fit,
        evaluations,
        design_builds,
    })
}

/// Lower BIC wins; exact ties go to the lexicographically larger (λ_ρ, λ_β).
fn better(candidate: &FitResult, current: &FitResult) -> bool {
    if candidate.bic != current.bic {
        return candidate.bic < current.bic;
    }
    candidate.lambdas > current.lambdas
}
