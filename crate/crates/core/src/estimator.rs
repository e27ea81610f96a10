//! Penalized two-stage least squares, surface reconstruction and fitted values.

use std::sync::atomic::{AtomicUsize, Ordering};

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSystem, QuadratureGrid};
use crate::design::{lagged_response_coeffs, DesignMatrices, FunctionalSample, InstrumentSet, NormalEquations, RankPolicy};
use crate::error::{Error, Result, StageExt};
use crate::selection::{self, LambdaGrid};
use crate::spatial::{contraction_check, surface_sup, SpatialWeights};

/// Neumann convergence tolerance on the max absolute change.
pub const NEUMANN_TOL: f64 = 1e-3;
pub const NEUMANN_MAX_ITER: usize = 1000;

/// Smallest eigenvalue of the system, relative to the data scale, below which
/// the penalized normal equations are rejected as singular.
const SINGULAR_CUTOFF: f64 = 1e-14;

/// Penalized derivative order in both marginal directions.
const PENALTY_ORDER: usize = 2;

/// Spline coefficients of ρ(t,u) (K_y×K_y) and β(t,s) (K_y×K_x), t index first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub rho: DMatrix<f64>,
    pub beta: DMatrix<f64>,
}

impl CoefficientSet {
    pub fn from_theta(theta: &DVector<f64>, k_y: usize, k_x: usize) -> Result<Self> {
        let p_rho = k_y * k_y;
        if theta.len() != p_rho + k_y * k_x {
            return Err(Error::DimensionMismatch(format!(
                "θ has length {}, expected {}",
                theta.len(),
                p_rho + k_y * k_x
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem {
                min_eigenvalue: f64::NAN,
                condition: f64::INFINITY,
            });
        }
        Ok(Self {
            rho: DMatrix::from_column_slice(k_y, k_y, &theta.as_slice()[..p_rho]),
            beta: DMatrix::from_column_slice(k_y, k_x, &theta.as_slice()[p_rho..]),
        })
    }

    /// θ = (vec ρ, vec b), column-major.
    pub fn theta(&self) -> DVector<f64> {
        DVector::from_iterator(self.rho.len() + self.beta.len(), self.rho.iter().chain(self.beta.iter()).copied())
    }
}

/// Unscaled penalty blocks, so R(λ_ρ, λ_β) is cheap to rebuild per grid point.
#[derive(Debug, Clone)]
pub struct PenaltyBlocks {
    rho: DMatrix<f64>,
    beta: DMatrix<f64>,
}

impl PenaltyBlocks {
    pub fn new(basis_y: &BasisSystem, basis_x: &BasisSystem) -> Result<Self> {
        let phi = basis_y.gram();
        let d_t = basis_y.penalty(PENALTY_ORDER)?;
        let psi = basis_x.gram();
        let d_s = basis_x.penalty(PENALTY_ORDER)?;
        Ok(Self {
            rho: phi.kronecker(&d_t) + d_t.kronecker(&phi),
            beta: psi.kronecker(&d_t) + d_s.kronecker(&phi),
        })
    }

    pub fn assemble(&self, lambda_rho: f64, lambda_beta: f64) -> Result<PenaltyAssembly> {
        for (name, l) in [("lambda_rho", lambda_rho), ("lambda_beta", lambda_beta)] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {l}")));
            }
        }
        let (pr, pb) = (self.rho.nrows(), self.beta.nrows());
        let mut r = DMatrix::zeros(pr + pb, pr + pb);
        r.view_mut((0, 0), (pr, pr)).copy_from(&(&self.rho * lambda_rho));
        r.view_mut((pr, pr), (pb, pb)).copy_from(&(&self.beta * lambda_beta));
        Ok(PenaltyAssembly {
            lambda_rho,
            lambda_beta,
            r,
        })
    }
}

/// R(λ_ρ, λ_β) = blockdiag(λ_ρ(Φ⊗D_t + D_u⊗Φ), λ_β(Ψ⊗D_t + D_s⊗Φ)).
#[derive(Debug, Clone)]
pub struct PenaltyAssembly {
    pub lambda_rho: f64,
    pub lambda_beta: f64,
    pub r: DMatrix<f64>,
}

pub fn assemble_penalty(
    lambda_rho: f64,
    lambda_beta: f64,
    basis_y: &BasisSystem,
    basis_x: &BasisSystem,
) -> Result<PenaltyAssembly> {
    PenaltyBlocks::new(basis_y, basis_x)?.assemble(lambda_rho, lambda_beta)
}

/// Solution of (A + R)θ = b together with the effective degrees of freedom.
#[derive(Debug, Clone)]
pub struct PenalizedSolution {
    pub theta: DVector<f64>,
    pub edf: f64,
    pub min_eigenvalue: f64,
    pub condition: f64,
}

/// Solves the symmetrized penalized normal equations.
pub fn solve_penalized(ne: &NormalEquations, r: &DMatrix<f64>) -> Result<PenalizedSolution> {
    solve_scaled(ne, r, data_scale(&ne.a))
}

/// Largest eigenvalue of the symmetrized Π̂ᵀΠ.
fn data_scale(a: &DMatrix<f64>) -> f64 {
    ((a + a.transpose()) * 0.5).symmetric_eigenvalues().max()
}

fn solve_scaled(ne: &NormalEquations, r: &DMatrix<f64>, a_scale: f64) -> Result<PenalizedSolution> {
    let p = ne.a.nrows();
    if ne.a.shape() != (p, p) || r.shape() != (p, p) || ne.b.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "system {:?}, penalty {:?}, right-hand side {}",
            ne.a.shape(),
            r.shape(),
            ne.b.len()
        )));
    }
    let a = (&ne.a + ne.a.transpose()) * 0.5;
    let s = &a + r;
    let eig = s.clone().symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    let scale = if a_scale > 0.0 { a_scale } else { max };
    if !(min > SINGULAR_CUTOFF * scale) || !condition.is_finite() {
        return Err(Error::SingularSystem {
            min_eigenvalue: min,
            condition,
        });
    }
    let chol = factor_with_jitter(s).ok_or(Error::SingularSystem {
        min_eigenvalue: min,
        condition,
    })?;
    let theta = chol.solve(&ne.b);
    let edf = chol.solve(&a).trace();
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem {
            min_eigenvalue: min,
            condition,
        });
    }
    Ok(PenalizedSolution {
        theta,
        edf,
        min_eigenvalue: min,
        condition,
    })
}

fn factor_with_jitter(s: DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = Cholesky::new(s.clone()) {
        return Some(c);
    }
    let mean_diag = s.diagonal().mean().abs();
    let mut jitter = 1e-10 * mean_diag;
    for _ in 0..3 {
        let mut t = s.clone();
        for i in 0..t.nrows() {
            t[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(t) {
            warn!("system factorized with diagonal jitter {jitter:.3e}");
            return Some(c);
        }
        jitter *= 100.0;
    }
    None
}

/// θ̂ from a materialized design.
pub fn pens2sls_solve(design: &DesignMatrices, penalty: &PenaltyAssembly, k_y: usize, k_x: usize) -> Result<CoefficientSet> {
    let sol = solve_penalized(&design.normal_equations(), &penalty.r)?;
    CoefficientSet::from_theta(&sol.theta, k_y, k_x)
}

/// ĝ(a,b) = Σ_ℓ Σ_k c_ℓk φ_ℓ(a) χ_k(b) on the grid cross-product.
pub fn reconstruct_surface(
    coeffs: &DMatrix<f64>,
    basis_row: &BasisSystem,
    basis_col: &BasisSystem,
    grid_row: &[f64],
    grid_col: &[f64],
) -> Result<DMatrix<f64>> {
    if coeffs.shape() != (basis_row.num_funcs(), basis_col.num_funcs()) {
        return Err(Error::DimensionMismatch(format!(
            "coefficients {:?} do not match bases ({}, {})",
            coeffs.shape(),
            basis_row.num_funcs(),
            basis_col.num_funcs()
        )));
    }
    let er = basis_row.eval(grid_row)?;
    let ec = basis_col.eval(grid_col)?;
    Ok(er * coeffs * ec.transpose())
}

/// Result of the Neumann iteration.
#[derive(Debug, Clone)]
pub struct NeumannOutcome {
    pub sample: FunctionalSample,
    pub iterations: usize,
}

/// Solves Y = 𝒯Y + f by the Neumann series, (𝒯Y)_i(t) = Σ_j w_ij Σ_u Δ_u ρ(t,u) Y_j(u).
pub fn neumann_fitted(
    w: &SpatialWeights,
    rho_surface: &DMatrix<f64>,
    forcing: &FunctionalSample,
    tol: f64,
    max_iter: usize,
) -> Result<NeumannOutcome> {
    let m = forcing.m();
    if rho_surface.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!(
            "ρ surface is {:?}, expected {m}×{m}",
            rho_surface.shape()
        )));
    }
    if w.n() != forcing.n() {
        return Err(Error::DimensionMismatch(format!(
            "weights cover {} units, forcing has {} curves",
            w.n(),
            forcing.n()
        )));
    }
    if !contraction_check(surface_sup(rho_surface), w) {
        warn!(
            "contraction condition fails (sup|ρ| = {:.3}, ‖W‖∞ = {:.3}); iterating up to {max_iter} times",
            surface_sup(rho_surface),
            w.inf_norm()
        );
    }
    let kt = operator_kernel(rho_surface, forcing.grid()).transpose();
    let mut total = forcing.values().clone();
    let mut term = forcing.values().clone();
    for it in 1..=max_iter {
        term = w.matrix() * (&term * &kt);
        total += &term;
        let change = if term.iter().all(|v| v.is_finite()) { term.amax() } else { f64::NAN };
        if !change.is_finite() {
            return Err(Error::NonConvergence {
                iterations: it,
                last_change: change,
            });
        }
        if change < tol {
            return Ok(NeumannOutcome {
                sample: FunctionalSample::new(total, forcing.grid().clone())?,
                iterations: it,
            });
        }
        if it == max_iter {
            return Err(Error::NonConvergence {
                iterations: it,
                last_change: change,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: 0,
        last_change: f64::NAN,
    })
}

/// K(t_a, u_b) = ρ(t_a, u_b) Δ_b, the discretized integral operator.
pub fn operator_kernel(rho_surface: &DMatrix<f64>, grid: &QuadratureGrid) -> DMatrix<f64> {
    let wts = grid.point_weights();
    let mut k = rho_surface.clone();
    for (mut col, wb) in k.column_iter_mut().zip(&wts) {
        col *= *wb;
    }
    k
}

/// ∫X_i(s) β(t,s) ds by the left-Riemann rule, β given on the t×s grid.
pub fn integrate_predictor(x: &FunctionalSample, beta_surface: &DMatrix<f64>, t_grid: &QuadratureGrid) -> Result<FunctionalSample> {
    if beta_surface.shape() != (t_grid.len(), x.m()) {
        return Err(Error::DimensionMismatch(format!(
            "β surface is {:?}, expected {}×{}",
            beta_surface.shape(),
            t_grid.len(),
            x.m()
        )));
    }
    let k = operator_kernel(beta_surface, x.grid());
    FunctionalSample::new(x.values() * k.transpose(), t_grid.clone())
}

/// Estimation settings other than the smoothing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub k_y: usize,
    pub k_x: usize,
    pub degree: usize,
    /// Highest spatial lag Q used as an instrument.
    pub iv_order: usize,
    pub allow_pinv: bool,
    pub neumann_tol: f64,
    pub neumann_max_iter: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k_y: 10,
            k_x: 10,
            degree: 3,
            iv_order: 2,
            allow_pinv: true,
            neumann_tol: NEUMANN_TOL,
            neumann_max_iter: NEUMANN_MAX_ITER,
        }
    }
}

impl FitConfig {
    fn rank_policy(&self) -> RankPolicy {
        if self.allow_pinv {
            RankPolicy::PseudoInverse
        } else {
            RankPolicy::Strict
        }
    }
}

/// Fixed smoothing parameters or a grid to search.
#[derive(Debug, Clone, PartialEq)]
pub enum Smoothing {
    Fixed { lambda_rho: f64, lambda_beta: f64 },
    Grid(LambdaGrid),
}

/// A fitted model.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: CoefficientSet,
    pub lambdas: (f64, f64),
    pub fitted: FunctionalSample,
    pub residuals: FunctionalSample,
    pub sigma2_hat: f64,
    pub bic: f64,
    pub edf: f64,
    /// ρ̂ on the response grid (rows t, columns u).
    pub rho_surface: DMatrix<f64>,
    /// β̂ with rows on the response grid and columns on the predictor grid.
    pub beta_surface: DMatrix<f64>,
    pub neumann_iterations: usize,
    pub basis_y: BasisSystem,
    pub basis_x: BasisSystem,
    pub x_grid: QuadratureGrid,
}

impl FitResult {
    pub fn n(&self) -> usize {
        self.fitted.n()
    }

    pub fn ssr(&self) -> f64 {
        self.residuals.values().norm_squared()
    }
}

/// Data-dependent quantities shared by every fit on the same (Y, X, W):
/// bases, penalty blocks, instrument projector and normal equations.
#[derive(Debug)]
pub struct PreparedFit {
    y: FunctionalSample,
    x: FunctionalSample,
    w: SpatialWeights,
    config: FitConfig,
    basis_y: BasisSystem,
    basis_x: BasisSystem,
    instruments: InstrumentSet,
    normal: NormalEquations,
    a_scale: f64,
    penalty: PenaltyBlocks,
    first_stage_builds: AtomicUsize,
}

impl PreparedFit {
    pub fn new(y: &FunctionalSample, x: &FunctionalSample, w: &SpatialWeights, config: &FitConfig) -> Result<Self> {
        if y.n() != x.n() || y.n() != w.n() {
            return Err(Error::DimensionMismatch(format!(
                "{} responses, {} predictors, {} spatial units",
                y.n(),
                x.n(),
                w.n()
            )));
        }
        let basis_y = BasisSystem::new(config.k_y, config.degree).stage("basis")?;
        let basis_x = BasisSystem::new(config.k_x, config.degree).stage("basis")?;
        let penalty = PenaltyBlocks::new(&basis_y, &basis_x).stage("penalty")?;
        let instruments = InstrumentSet::new(x, w, config.iv_order, &basis_x, &basis_y, y.grid(), config.rank_policy())
            .stage("instruments")?;
        let phi_tilde = lagged_response_coeffs(y, w, &basis_y).stage("design")?;
        let normal = instruments.normal_equations(&phi_tilde, y).stage("first stage")?;
        Ok(Self {
            y: y.clone(),
            x: x.clone(),
            w: w.clone(),
            config: config.clone(),
            basis_y,
            basis_x,
            instruments,
            a_scale: data_scale(&normal.a),
            normal,
            penalty,
            first_stage_builds: AtomicUsize::new(1),
        })
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    pub fn response(&self) -> &FunctionalSample {
        &self.y
    }

    pub fn normal_equations(&self) -> &NormalEquations {
        &self.normal
    }

    /// How many times the first stage (Π, Z, Π̂ and the normal equations)
    /// has been computed for this object.
    pub fn first_stage_builds(&self) -> usize {
        self.first_stage_builds.load(Ordering::Relaxed)
    }

    pub fn weights(&self) -> &SpatialWeights {
        &self.w
    }

    pub fn predictors(&self) -> &FunctionalSample {
        &self.x
    }

    pub fn penalty(&self, lambda_rho: f64, lambda_beta: f64) -> Result<PenaltyAssembly> {
        self.penalty.assemble(lambda_rho, lambda_beta)
    }

    /// Materialized Π, Z, vec(Y), Π̂ for the prepared data.
    pub fn dense_design(&self) -> Result<DesignMatrices> {
        let phi_tilde = lagged_response_coeffs(&self.y, &self.w, &self.basis_y)?;
        Ok(self.instruments.dense(&phi_tilde, &self.y))
    }

    /// Coefficients and effective df at the given smoothing parameters.
    pub fn solve(&self, lambda_rho: f64, lambda_beta: f64) -> Result<(CoefficientSet, PenalizedSolution)> {
        let pen = self.penalty(lambda_rho, lambda_beta)?;
        let sol = solve_scaled(&self.normal, &pen.r, self.a_scale).stage("second stage")?;
        let coef = CoefficientSet::from_theta(&sol.theta, self.config.k_y, self.config.k_x).stage("second stage")?;
        Ok((coef, sol))
    }

    /// Coefficients for a different response on the same X and W.
    pub fn solve_response(&self, y: &FunctionalSample, lambda_rho: f64, lambda_beta: f64) -> Result<CoefficientSet> {
        let pen = self.penalty(lambda_rho, lambda_beta)?;
        let phi_tilde = lagged_response_coeffs(y, &self.w, &self.basis_y).stage("design")?;
        let normal = self.instruments.normal_equations(&phi_tilde, y).stage("first stage")?;
        self.first_stage_builds.fetch_add(1, Ordering::Relaxed);
        let sol = solve_penalized(&normal, &pen.r).stage("second stage")?;
        CoefficientSet::from_theta(&sol.theta, self.config.k_y, self.config.k_x)
    }

    /// (ρ̂, β̂) surfaces on the data grids.
    pub fn surfaces(&self, coef: &CoefficientSet) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let t = self.y.grid().points();
        let rho = reconstruct_surface(&coef.rho, &self.basis_y, &self.basis_y, t, t)?;
        let beta = reconstruct_surface(&coef.beta, &self.basis_y, &self.basis_x, t, self.x.grid().points())?;
        Ok((rho, beta))
    }

    /// Full fit at fixed smoothing parameters.
    pub fn fit_at(&self, lambda_rho: f64, lambda_beta: f64) -> Result<FitResult> {
        let (theta, sol) = self.solve(lambda_rho, lambda_beta)?;
        let (rho_surface, beta_surface) = self.surfaces(&theta).stage("reconstruction")?;
        let forcing = integrate_predictor(&self.x, &beta_surface, self.y.grid()).stage("fitted values")?;
        let neumann = neumann_fitted(
            &self.w,
            &rho_surface,
            &forcing,
            self.config.neumann_tol,
            self.config.neumann_max_iter,
        )
        .stage("fitted values")?;
        let fitted = neumann.sample;
        let residuals = FunctionalSample::new(self.y.values() - fitted.values(), self.y.grid().clone())?;
        let sigma2_hat = residuals.values().norm_squared() / residuals.values().len() as f64;
        let mut fit = FitResult {
            theta,
            lambdas: (lambda_rho, lambda_beta),
            fitted,
            residuals,
            sigma2_hat,
            bic: f64::NAN,
            edf: sol.edf,
            rho_surface,
            beta_surface,
            neumann_iterations: neumann.iterations,
            basis_y: self.basis_y.clone(),
            basis_x: self.basis_x.clone(),
            x_grid: self.x.grid().clone(),
        };
        fit.bic = selection::bic(&fit).stage("criterion")?;
        Ok(fit)
    }
}

/// End-to-end estimation.
pub fn fit(
    y: &FunctionalSample,
    x: &FunctionalSample,
    w: &SpatialWeights,
    config: &FitConfig,
    smoothing: &Smoothing,
) -> Result<FitResult> {
    let prepared = PreparedFit::new(y, x, w, config)?;
    match smoothing {
        Smoothing::Fixed {
            lambda_rho,
            lambda_beta,
        } => prepared.fit_at(*lambda_rho, *lambda_beta),
        Smoothing::Grid(grid) => Ok(selection::search_prepared(&prepared, grid)?.fit),
    }
}
