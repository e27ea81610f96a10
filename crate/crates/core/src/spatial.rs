//! Spatial weight matrices, spatial lags of discretized curves, the
//! functional Moran's I curve, and the contraction diagnostic for the
//! spatial autoregressive operator.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSystem;
use crate::design::FunctionalSample;
use crate::error::{Error, Result};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Bandwidth neighbour count used for the weather-station application.
pub const DEFAULT_NEIGHBOURS: usize = 4;

/// An n×n non-negative weight matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    matrix: DMatrix<f64>,
    normalized: bool,
}

impl SpatialWeights {
    /// Wraps a matrix after checking shape, sign and diagonal.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidWeights(format!(
                "weight matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        for i in 0..matrix.nrows() {
            if matrix[(i, i)] != 0.0 {
                return Err(Error::InvalidWeights(format!(
                    "diagonal entry w[{i},{i}] = {} must be exactly zero",
                    matrix[(i, i)]
                )));
            }
        }
        if let Some(bad) = matrix.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidWeights(format!(
                "weights must be finite and non-negative, found {bad}"
            )));
        }
        let normalized = is_row_stochastic(&matrix);
        Ok(Self { matrix, normalized })
    }

    /// All-zero weights: no spatial interaction.
    pub fn zeros(n: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(n, n),
            normalized: false,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Maximum absolute row sum, ‖W‖_∞.
    pub fn inf_norm(&self) -> f64 {
        self.matrix
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

fn is_row_stochastic(m: &DMatrix<f64>) -> bool {
    m.row_iter().all(|r| {
        let s: f64 = r.sum();
        s == 0.0 || (s - 1.0).abs() < 1e-12
    })
}

/// Longitude/latitude pairs in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationCoords {
    longitude: Vec<f64>,
    latitude: Vec<f64>,
}

impl StationCoords {
    pub fn new(longitude: Vec<f64>, latitude: Vec<f64>) -> Result<Self> {
        if longitude.len() != latitude.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} longitudes but {} latitudes",
                longitude.len(),
                latitude.len()
            )));
        }
        if let Some(l) = latitude.iter().find(|l| !(-90.0..=90.0).contains(*l)) {
            return Err(Error::InvalidDimension(format!("latitude {l} outside [-90, 90]")));
        }
        if let Some(l) = longitude.iter().find(|l| !(-180.0..=180.0).contains(*l)) {
            return Err(Error::InvalidDimension(format!("longitude {l} outside [-180, 180]")));
        }
        Ok(Self {
            longitude,
            latitude,
        })
    }

    pub fn len(&self) -> usize {
        self.longitude.len()
    }

    pub fn is_empty(&self) -> bool {
        self.longitude.is_empty()
    }

    pub fn longitude(&self) -> &[f64] {
        &self.longitude
    }

    pub fn latitude(&self) -> &[f64] {
        &self.latitude
    }
}

/// How pairwise station distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    /// Great-circle distance in km on a sphere of radius [`EARTH_RADIUS_KM`].
    #[default]
    Haversine,
    /// Planar distance treating (lon, lat) as Cartesian coordinates.
    Euclidean,
}

pub fn haversine_km(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

fn distance(coords: &StationCoords, i: usize, j: usize, metric: DistanceMetric) -> f64 {
    let (lo, la) = (&coords.longitude, &coords.latitude);
    match metric {
        DistanceMetric::Haversine => haversine_km(lo[i], la[i], lo[j], la[j]),
        DistanceMetric::Euclidean => ((lo[i] - lo[j]).powi(2) + (la[i] - la[j]).powi(2)).sqrt(),
    }
}

/// Row-normalized inverse-distance weights on a line: w_ij ∝ 1/(1+|i−j|).
pub fn inverse_distance_weights(n: usize) -> Result<SpatialWeights> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!(
            "inverse-distance weights need n >= 2, got {n}"
        )));
    }
    let raw = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            1.0 / (1.0 + i.abs_diff(j) as f64)
        }
    });
    Ok(row_normalize(&SpatialWeights::new(raw)?).weights)
}

/// K-nearest-neighbour bi-square weights with adaptive bandwidth.
///
/// The bandwidth of station i is the distance to its h-th nearest neighbour.
/// If every neighbour sits exactly at the bandwidth the kernel vanishes on the
/// whole neighbour set; the row then falls back to uniform weights 1/h.
pub fn knn_bisquare_weights(
    coords: &StationCoords,
    h: usize,
    metric: DistanceMetric,
) -> Result<SpatialWeights> {
    let n = coords.len();
    if h < 1 || n < h + 1 {
        return Err(Error::InvalidDimension(format!(
            "need 1 <= h < n for nearest-neighbour weights, got h = {h}, n = {n}"
        )));
    }
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (distance(coords, i, j, metric), j))
            .collect();
        // stable sort keeps lower indices first among equal distances
        others.sort_by(|a, b| a.0.total_cmp(&b.0));
        let neighbours = &others[..h];
        let bandwidth = neighbours.iter().map(|(d, _)| *d).fold(0.0, f64::max);
        if bandwidth <= 0.0 {
            return Err(Error::DuplicateCoordinates { station: i });
        }
        let kernel: Vec<f64> = neighbours
            .iter()
            .map(|(d, _)| (1.0 - (d / bandwidth).powi(2)).powi(2))
            .collect();
        let total: f64 = kernel.iter().sum();
        for ((_, j), k) in neighbours.iter().zip(&kernel) {
            w[(i, *j)] = if total > 0.0 { k / total } else { 1.0 / h as f64 };
        }
    }
    let mut weights = SpatialWeights::new(w)?;
    weights.normalized = true;
    Ok(weights)
}

/// Output of [`row_normalize`]: the scaled matrix plus rows that were all zero.
#[derive(Debug, Clone)]
pub struct RowNormalized {
    pub weights: SpatialWeights,
    pub zero_rows: Vec<usize>,
}

/// Divides each nonzero row by its sum. All-zero rows stay zero and are reported.
pub fn row_normalize(w: &SpatialWeights) -> RowNormalized {
    let mut m = w.matrix.clone();
    let mut zero_rows = Vec::new();
    for (i, mut row) in m.row_iter_mut().enumerate() {
        let s: f64 = row.sum();
        if s > 0.0 {
            row /= s;
        } else {
            zero_rows.push(i);
        }
    }
    if !zero_rows.is_empty() {
        warn!("{} isolated unit(s) have all-zero weight rows: {:?}", zero_rows.len(), zero_rows);
    }
    RowNormalized {
        weights: SpatialWeights {
            matrix: m,
            normalized: true,
        },
        zero_rows,
    }
}

/// Applies W^q to the curve matrix, pointwise on the grid.
pub fn spatial_lag(w: &SpatialWeights, curves: &FunctionalSample, q: usize) -> Result<FunctionalSample> {
    if q < 1 {
        return Err(Error::InvalidDimension("spatial lag order must be at least 1".into()));
    }
    if w.n() != curves.n() {
        return Err(Error::DimensionMismatch(format!(
            "weights are {}x{} but the sample holds {} curves",
            w.n(),
            w.n(),
            curves.n()
        )));
    }
    let mut values = curves.values().clone();
    for _ in 0..q {
        values = w.matrix() * values;
    }
    FunctionalSample::new(values, curves.grid().clone())
}

/// Least-squares basis coefficients of each curve (n × K).
pub fn fit_coefficients(curves: &FunctionalSample, basis: &BasisSystem) -> Result<DMatrix<f64>> {
    let phi = basis.eval(curves.grid().points())?;
    let svd = phi.clone().svd(true, true);
    let rhs = curves.values().transpose();
    let coef = svd
        .solve(&rhs, 1e-12 * svd.singular_values.max())
        .map_err(|e| Error::InvalidDimension(format!("basis least squares failed: {e}")))?;
    Ok(coef.transpose())
}

/// Functional Moran's I evaluated at `eval_points`.
///
/// With V the n×K coefficient matrix and c(t) = Vφ(t), I(t) = c'Wc / c'c.
pub fn moran_curve(
    curves: &FunctionalSample,
    basis: &BasisSystem,
    w: &SpatialWeights,
    eval_points: &[f64],
) -> Result<Vec<f64>> {
    if w.n() != curves.n() {
        return Err(Error::DimensionMismatch(format!(
            "weights cover {} units but the sample holds {} curves",
            w.n(),
            curves.n()
        )));
    }
    let v = fit_coefficients(curves, basis)?;
    let phi = basis.eval(eval_points)?;
    let fitted = &v * phi.transpose(); // n × |eval_points|
    let lagged = w.matrix() * &fitted;
    let mut out = Vec::with_capacity(eval_points.len());
    for (j, &t) in eval_points.iter().enumerate() {
        let c = fitted.column(j);
        let den = c.dot(&c);
        if !den.is_normal() {
            return Err(Error::ZeroDenominator { t });
        }
        out.push(c.dot(&lagged.column(j)) / den);
    }
    Ok(out)
}

/// ‖ρ‖_∞ · ‖W‖_∞ < 1, sufficient for the Neumann series to converge.
pub fn contraction_check(rho_sup: f64, w: &SpatialWeights) -> bool {
    rho_sup * w.inf_norm() < 1.0
}

/// Sup-norm of a surface sampled on a grid.
pub fn surface_sup(surface: &DMatrix<f64>) -> f64 {
    surface.amax()
}
