//! Discretized curves, basis-weighted projections, and the two-stage design.
//!
//! Every block of the regression design Π and of the instrument matrix Z is a
//! Kronecker product `C ⊗ φ*`, where `C` holds per-unit projection
//! coefficients (n rows) and `φ*` is the M×K_y response-basis matrix. The
//! dense matrices are available for inspection and for small problems; the
//! estimator itself works with the coefficient factors, using
//!
//! ```text
//! P_Z Π       = (P_C C_Π) ⊗ φ*
//! Π̂ᵀ Π        = (C_Πᵀ P_C C_Π) ⊗ (φ*ᵀ φ*)
//! Π̂ᵀ vec(Y)   = vec(φ*ᵀ Yᵀ P_C C_Π)
//! ```
//!
//! where `P_C` projects onto the column span of the instrument coefficients.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::basis::{BasisSystem, QuadratureGrid};
use crate::error::{Error, Result};
use crate::spatial::{spatial_lag, SpatialWeights};

/// Condition number of ZᵀZ above which a weak-instrument warning is logged.
pub const INSTRUMENT_CONDITION_WARN: f64 = 1e12;

/// Relative eigenvalue cutoff below which ZᵀZ is treated as rank deficient.
const RANK_CUTOFF: f64 = 1e-13;

/// n curves observed on a shared grid (row i = curve i).
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSample {
    values: DMatrix<f64>,
    grid: QuadratureGrid,
}

impl FunctionalSample {
    pub fn new(values: DMatrix<f64>, grid: QuadratureGrid) -> Result<Self> {
        if values.ncols() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "curve matrix has {} columns but the grid has {} points",
                values.ncols(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDimension("curve values must be finite".into()));
        }
        Ok(Self { values, grid })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Subtracts the cross-sectional mean curve.
    pub fn centered(&self) -> Self {
        let n = self.n().max(1) as f64;
        let mean = self.values.row_sum() / n;
        let mut v = self.values.clone();
        for mut row in v.row_iter_mut() {
            row -= &mean;
        }
        Self {
            values: v,
            grid: self.grid.clone(),
        }
    }

    /// Rows selected by `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(idx),
            grid: self.grid.clone(),
        }
    }

    /// Column-major vec of the M×n response matrix (curve i contiguous).
    pub fn vec(&self) -> DVector<f64> {
        DVector::from_iterator(self.values.len(), self.values.transpose().iter().copied())
    }

    /// Inverse of [`FunctionalSample::vec`].
    pub fn from_vec(v: &DVector<f64>, grid: QuadratureGrid) -> Result<Self> {
        let m = grid.len();
        if v.len() % m != 0 {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} is not a multiple of the grid size {m}",
                v.len()
            )));
        }
        let n = v.len() / m;
        Self::new(DMatrix::from_column_slice(m, n, v.as_slice()).transpose(), grid)
    }
}

/// Left-Riemann projections Σ_r Δ_r ψ_k(s_r) X_i(s_r), as an n×K matrix.
pub fn project_curves(sample: &FunctionalSample, basis: &BasisSystem) -> Result<DMatrix<f64>> {
    let psi = basis.eval(sample.grid().points())?;
    let w = sample.grid().point_weights();
    let mut weighted = psi;
    for (mut row, wr) in weighted.row_iter_mut().zip(&w) {
        row *= *wr;
    }
    Ok(sample.values() * weighted)
}

fn check_rows(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {} rows versus {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    Ok(())
}

/// Dense Π = [φ̃ ⊗ φ* | ψ̃ ⊗ φ*], block row i holding the M rows of unit i.
pub fn build_design(
    resp_lag_coeffs: &DMatrix<f64>,
    pred_coeffs: &DMatrix<f64>,
    basis_y: &BasisSystem,
    t_grid: &[f64],
) -> Result<DMatrix<f64>> {
    check_rows(resp_lag_coeffs, pred_coeffs, "design blocks")?;
    if resp_lag_coeffs.ncols() != basis_y.num_funcs() {
        return Err(Error::DimensionMismatch(format!(
            "lagged-response coefficients have {} columns, expected K_y = {}",
            resp_lag_coeffs.ncols(),
            basis_y.num_funcs()
        )));
    }
    let phi_star = basis_y.eval(t_grid)?;
    let coef = concat_columns(&[resp_lag_coeffs, pred_coeffs]);
    Ok(coef.kronecker(&phi_star))
}

/// Spatially lagged predictor coefficients [ψ̃ | ψ̃^(1) | … | ψ̃^(Q)].
pub fn instrument_coefficients(
    pred_coeffs: &DMatrix<f64>,
    w: &SpatialWeights,
    q: usize,
) -> Result<DMatrix<f64>> {
    if q < 1 {
        return Err(Error::InvalidDimension("instrument order Q must be at least 1".into()));
    }
    if w.n() != pred_coeffs.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "weights cover {} units but there are {} predictor curves",
            w.n(),
            pred_coeffs.nrows()
        )));
    }
    let mut blocks = vec![pred_coeffs.clone()];
    for _ in 0..q {
        let next = w.matrix() * blocks.last().expect("non-empty");
        blocks.push(next);
    }
    let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
    Ok(concat_columns(&refs))
}

/// Dense Z = [Z_0 | Z_1 | … | Z_Q] with Z_q = ψ̃^(q) ⊗ φ*.
///
/// The lag is applied to the coefficients; by linearity of the projection this
/// is identical to lagging the curves first.
pub fn build_instruments(
    pred_coeffs: &DMatrix<f64>,
    w: &SpatialWeights,
    q: usize,
    basis_y: &BasisSystem,
    t_grid: &[f64],
) -> Result<DMatrix<f64>> {
    let coef = instrument_coefficients(pred_coeffs, w, q)?;
    let phi_star = basis_y.eval(t_grid)?;
    Ok(coef.kronecker(&phi_star))
}

pub(crate) fn concat_columns(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// What to do when ZᵀZ is numerically singular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankPolicy {
    /// Project onto the numerical column span (pseudo-inverse).
    #[default]
    PseudoInverse,
    /// Refuse with [`Error::SingularInstruments`].
    Strict,
}

/// Orthogonal projector onto the column span of an instrument matrix.
///
/// Built from the eigendecomposition of ZᵀZ so that near-collinear instrument
/// blocks are handled by truncation instead of an ill-conditioned inverse.
#[derive(Debug, Clone)]
pub struct Projector {
    z: DMatrix<f64>,
    /// V_r Λ_r^{-1} V_rᵀ, the (pseudo-)inverse of ZᵀZ.
    gram_pinv: DMatrix<f64>,
    condition: f64,
    rank: usize,
}

impl Projector {
    pub fn new(z: DMatrix<f64>, policy: RankPolicy) -> Result<Self> {
        let ztz = z.transpose() * &z;
        let ztz = (&ztz + ztz.transpose()) * 0.5;
        let eig = ztz.symmetric_eigen();
        let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if max <= 0.0 {
            return Err(Error::SingularInstruments { condition });
        }
        if condition > INSTRUMENT_CONDITION_WARN {
            warn!("instrument matrix is ill-conditioned (cond(Z'Z) = {condition:.3e})");
        }
        let cutoff = RANK_CUTOFF * max;
        let keep: Vec<usize> = (0..eig.eigenvalues.len())
            .filter(|&i| eig.eigenvalues[i] > cutoff)
            .collect();
        if keep.len() < z.ncols() && policy == RankPolicy::Strict {
            return Err(Error::SingularInstruments { condition });
        }
        let p = z.ncols();
        let mut gram_pinv = DMatrix::zeros(p, p);
        for &i in &keep {
            let v = eig.eigenvectors.column(i);
            gram_pinv += (v * v.transpose()) / eig.eigenvalues[i];
        }
        Ok(Self {
            rank: keep.len(),
            z,
            gram_pinv,
            condition,
        })
    }

    /// Z (ZᵀZ)⁺ Zᵀ m, without forming the projector itself.
    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let c = &self.gram_pinv * (self.z.transpose() * m);
        &self.z * c
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn instruments(&self) -> &DMatrix<f64> {
        &self.z
    }
}

/// First-stage fit Π̂ = Z (ZᵀZ)⁻¹ Zᵀ Π.
pub fn first_stage(pi: &DMatrix<f64>, z: &DMatrix<f64>, policy: RankPolicy) -> Result<DMatrix<f64>> {
    check_rows(pi, z, "first stage")?;
    Ok(Projector::new(z.clone(), policy)?.apply(pi))
}

/// Materialized two-stage design.
#[derive(Debug, Clone)]
pub struct DesignMatrices {
    /// Π, (nM) × (K_y² + K_y K_x), columns ordered [ρ-block | β-block].
    pub pi: DMatrix<f64>,
    /// Z, (nM) × (K_y K_x (Q+1)).
    pub z: DMatrix<f64>,
    /// vec of the M×n response matrix.
    pub y_vec: DVector<f64>,
    /// Π̂, same shape as Π.
    pub pi_hat: DMatrix<f64>,
}

impl DesignMatrices {
    /// Π̂ᵀΠ and Π̂ᵀ vec(Y).
    pub fn normal_equations(&self) -> NormalEquations {
        NormalEquations {
            a: self.pi_hat.transpose() * &self.pi,
            b: self.pi_hat.transpose() * &self.y_vec,
        }
    }
}

/// Left- and right-hand side of the unpenalized second stage.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// The Y-independent half of the design: predictor projections, instrument
/// coefficients and their projector. Reused across λ values and bootstrap
/// replicates, since neither changes X or W.
#[derive(Debug, Clone)]
pub struct InstrumentSet {
    pred_coeffs: DMatrix<f64>,
    projector: Projector,
    phi_star: DMatrix<f64>,
    phi_gram: DMatrix<f64>,
    q: usize,
}

impl InstrumentSet {
    pub fn new(
        x: &FunctionalSample,
        w: &SpatialWeights,
        q: usize,
        basis_x: &BasisSystem,
        basis_y: &BasisSystem,
        t_grid: &QuadratureGrid,
        policy: RankPolicy,
    ) -> Result<Self> {
        let pred_coeffs = project_curves(x, basis_x)?;
        let coef = instrument_coefficients(&pred_coeffs, w, q)?;
        let phi_star = basis_y.eval(t_grid.points())?;
        let phi_gram = phi_star.transpose() * &phi_star;
        let projector = Projector::new(coef, policy)?;
        let gram_cond = {
            let e = phi_gram.clone().symmetric_eigenvalues();
            let (lo, hi) = e.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if lo > 0.0 { hi / lo } else { f64::INFINITY }
        };
        let full = projector.condition() * gram_cond;
        if full > INSTRUMENT_CONDITION_WARN && projector.condition() <= INSTRUMENT_CONDITION_WARN {
            warn!("instrument matrix is ill-conditioned (cond(Z'Z) = {full:.3e})");
        }
        Ok(Self {
            pred_coeffs,
            projector,
            phi_star,
            phi_gram,
            q,
        })
    }

    /// ψ̃, the n×K_x predictor projections.
    pub fn pred_coeffs(&self) -> &DMatrix<f64> {
        &self.pred_coeffs
    }

    pub fn phi_star(&self) -> &DMatrix<f64> {
        &self.phi_star
    }

    pub fn order(&self) -> usize {
        self.q
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    /// [φ̃ | ψ̃] for a given lagged-response projection φ̃.
    fn design_coeffs(&self, resp_lag_coeffs: &DMatrix<f64>) -> DMatrix<f64> {
        concat_columns(&[resp_lag_coeffs, &self.pred_coeffs])
    }

    /// Second-stage normal equations from the Kronecker factors.
    pub fn normal_equations(&self, resp_lag_coeffs: &DMatrix<f64>, y: &FunctionalSample) -> Result<NormalEquations> {
        if resp_lag_coeffs.nrows() != self.pred_coeffs.nrows() || y.n() != self.pred_coeffs.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "instrument set covers {} units, got {} lagged projections and {} responses",
                self.pred_coeffs.nrows(),
                resp_lag_coeffs.nrows(),
                y.n()
            )));
        }
        if y.m() != self.phi_star.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "responses have {} grid points, design expects {}",
                y.m(),
                self.phi_star.nrows()
            )));
        }
        let c = self.design_coeffs(resp_lag_coeffs);
        let pc = self.projector.apply(&c);
        let a = (pc.transpose() * &c).kronecker(&self.phi_gram);
        // vec(φ*ᵀ Yᵀ P C), Yᵀ being the M×n response matrix
        let rhs = self.phi_star.transpose() * y.values().transpose() * &pc;
        let b = DVector::from_column_slice(rhs.as_slice());
        Ok(NormalEquations { a, b })
    }

    /// Materializes Π, Z, vec(Y) and Π̂ for inspection or cross-checking.
    pub fn dense(&self, resp_lag_coeffs: &DMatrix<f64>, y: &FunctionalSample) -> DesignMatrices {
        let c = self.design_coeffs(resp_lag_coeffs);
        let pc = self.projector.apply(&c);
        DesignMatrices {
            pi: c.kronecker(&self.phi_star),
            z: self.projector.instruments().kronecker(&self.phi_star),
            y_vec: y.vec(),
            pi_hat: pc.kronecker(&self.phi_star),
        }
    }
}

/// φ̃: projections of the spatially lagged responses W·Y onto the response basis.
pub fn lagged_response_coeffs(
    y: &FunctionalSample,
    w: &SpatialWeights,
    basis_y: &BasisSystem,
) -> Result<DMatrix<f64>> {
    project_curves(&spatial_lag(w, y, 1)?, basis_y)
}
