use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the estimation pipeline and its I/O surface.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("point {point} lies outside the domain [0, 1]")]
    OutOfDomain { point: f64 },

    #[error("derivative order {order} exceeds spline degree {degree}")]
    InvalidOrder { order: usize, degree: usize },

    #[error("grid is not strictly increasing at index {index}")]
    NonMonotoneGrid { index: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid spatial weights: {0}")]
    InvalidWeights(String),

    #[error("station {station} has zero bandwidth: its neighbours share its coordinates")]
    DuplicateCoordinates { station: usize },

    #[error("Moran's I denominator vanishes at t = {t}")]
    ZeroDenominator { t: f64 },

    #[error("instrument cross-product is numerically singular (condition number {condition:.3e})")]
    SingularInstruments { condition: f64 },

    #[error(
        "penalized normal equations are singular (smallest eigenvalue {min_eigenvalue:.3e}, \
         condition number {condition:.3e}); increase lambda_rho / lambda_beta"
    )]
    SingularSystem { min_eigenvalue: f64, condition: f64 },

    #[error("Neumann iteration did not converge after {iterations} iterations (last change {last_change:.3e})")]
    NonConvergence { iterations: usize, last_change: f64 },

    #[error("residual variance {0:.3e} is degenerate")]
    DegenerateVariance(f64),

    #[error("{0} has zero norm")]
    ZeroNorm(&'static str),

    #[error("all {attempted} grid points failed; last error: {last}")]
    AllFitsFailed { attempted: usize, last: String },

    #[error("{failed} of {total} {what} failed, above the {limit_pct}% tolerance")]
    TooManyFailures {
        failed: usize,
        total: usize,
        what: &'static str,
        limit_pct: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Schema,
    Numerical,
    Io,
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Stage { source, .. } => source.class(),
            Error::Io { .. } => ErrorClass::Io,
            Error::Schema { .. }
            | Error::Config(_)
            | Error::InvalidDimension(_)
            | Error::OutOfDomain { .. }
            | Error::InvalidOrder { .. }
            | Error::NonMonotoneGrid { .. }
            | Error::DimensionMismatch(_)
            | Error::InvalidWeights(_)
            | Error::DuplicateCoordinates { .. } => ErrorClass::Schema,
            _ => ErrorClass::Numerical,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
